//! Run configuration: one TOML file drives the whole pipeline. The run
//! directory is content-addressed by a hash of the resolved config so
//! artifacts from different configs can never mix.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nrank_core::stats::SignFlipMode;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub judges: JudgesSection,
    #[serde(default)]
    pub lexical: LexicalSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub distill: DistillSection,
    #[serde(default)]
    pub sigtest: SigtestSection,
    #[serde(default)]
    pub bins: BinsSection,
    #[serde(default)]
    pub ksweep: KsweepSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub stories: Option<PathBuf>,
    pub labels_a: Option<PathBuf>,
    pub labels_b: Option<PathBuf>,
    #[serde(default)]
    pub embeddings: Vec<PathBuf>,
    pub teacher: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub out_root: PathBuf,
    pub k: usize,
    pub seeds: Vec<u64>,
    /// (train, dev, test) sizes; must sum to the eligible-query count.
    pub sizes: [usize; 3],
    pub methods: Vec<String>,
    /// 0 = one worker per core.
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            out_root: PathBuf::from("runs"),
            k: 5,
            seeds: (0..10).collect(),
            sizes: [239, 34, 70],
            methods: vec![
                "random".into(),
                "bm25".into(),
                "dph".into(),
                "dirichlet".into(),
                "bscore".into(),
            ],
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgesSection {
    /// Which judge supervises training. Anything but "b" is refused by
    /// the vault with a leakage error.
    pub supervision: String,
    /// Which judge's labels metrics are computed from. "b" demands
    /// `allow_leaky` and poisons every report with a LEAKY banner.
    pub evaluation: String,
    pub allow_leaky: bool,
}

impl Default for JudgesSection {
    fn default() -> Self {
        JudgesSection { supervision: "b".into(), evaluation: "a".into(), allow_leaky: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexicalSection {
    pub k1: f64,
    pub b: f64,
    pub mu: f64,
    /// "pool" (default) or "corpus": which collection statistics the
    /// lexical formulas normalise against.
    pub collection: String,
}

impl Default for LexicalSection {
    fn default() -> Self {
        LexicalSection { k1: 1.2, b: 0.75, mu: 2000.0, collection: "pool".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub pair_cap: usize,
    pub train_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            hidden: 256,
            learning_rate: 1e-3,
            batch: 64,
            max_epochs: 50,
            patience: 5,
            pair_cap: 800,
            train_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    /// 0 = square projection (p = d).
    pub proj_dim: usize,
    pub learning_rate: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for DistillSection {
    fn default() -> Self {
        DistillSection { proj_dim: 0, learning_rate: 1e-3, batch: 64, max_epochs: 50, patience: 5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigtestSection {
    pub pairs: Vec<[String; 2]>,
    pub metrics: Vec<String>,
    pub n_perm: u64,
    pub seed: u64,
    pub mode: SignFlipMode,
}

impl Default for SigtestSection {
    fn default() -> Self {
        SigtestSection {
            pairs: vec![],
            metrics: vec!["ndcg@5".into(), "err@5".into()],
            n_perm: 50_000,
            seed: 1234,
            mode: SignFlipMode::Auto,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinsSection {
    pub thresholds: [usize; 2],
}

impl Default for BinsSection {
    fn default() -> Self {
        BinsSection { thresholds: [35, 50] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KsweepSection {
    pub ks: Vec<usize>,
}

impl Default for KsweepSection {
    fn default() -> Self {
        KsweepSection { ks: vec![1, 3, 5, 10] }
    }
}

/// Methods the harness knows how to rank with.
pub const KNOWN_METHODS: [&str; 10] = [
    "random",
    "bm25",
    "dph",
    "dirichlet",
    "cosine",
    "bscore",
    "pointwise",
    "pairwise",
    "listmle",
    "distill",
];

/// Methods whose scores are real-valued relevance estimates; their
/// correlations appear in the main table, the rest in diagnostics.
pub const SCORE_INFORMATIVE: [&str; 6] =
    ["cosine", "bscore", "pointwise", "pairwise", "listmle", "distill"];

pub fn method_needs_embeddings(method: &str) -> bool {
    matches!(method, "cosine" | "pointwise" | "pairwise" | "listmle" | "distill")
}

pub fn method_needs_training(method: &str) -> bool {
    matches!(method, "pointwise" | "pairwise" | "listmle" | "distill")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, toml::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.k == 0 {
            bail!("run.k must be >= 1");
        }
        if self.run.seeds.is_empty() {
            bail!("run.seeds must not be empty");
        }
        for method in &self.run.methods {
            if !KNOWN_METHODS.contains(&method.as_str()) {
                bail!("unknown method {method:?}; known: {}", KNOWN_METHODS.join(", "));
            }
        }
        for pair in &self.sigtest.pairs {
            for method in pair {
                if !self.run.methods.contains(method) {
                    bail!("sigtest pair references method {method:?} not in run.methods");
                }
            }
        }
        if !matches!(self.lexical.collection.as_str(), "pool" | "corpus") {
            bail!("lexical.collection must be \"pool\" or \"corpus\"");
        }
        for judge in [&self.judges.supervision, &self.judges.evaluation] {
            if !matches!(judge.as_str(), "a" | "b") {
                bail!("judges must be \"a\" or \"b\", got {judge:?}");
            }
        }
        if self.bins.thresholds[0] >= self.bins.thresholds[1] {
            bail!("bins.thresholds must increase");
        }
        if self.ksweep.ks.iter().any(|&k| k == 0) {
            bail!("ksweep.ks must all be >= 1");
        }
        Ok(())
    }

    /// Hash of the resolved config (12 hex chars); the run directory is
    /// `out_root/run-<hash>`.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.run.out_root.join(format!("run-{}", self.content_hash()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_hash_stably() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.content_hash(), cfg.content_hash());
        let mut other = RunConfig::default();
        other.run.k = 3;
        assert_ne!(cfg.content_hash(), other.content_hash());
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = RunConfig::default();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg.content_hash(), back.content_hash());
    }

    #[test]
    fn validation_catches_unknown_method() {
        let mut cfg = RunConfig::default();
        cfg.run.methods.push("oracle-of-delphi".into());
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn validation_catches_sigtest_method_not_run() {
        let mut cfg = RunConfig::default();
        cfg.sigtest.pairs.push(["bscore".into(), "cosine".into()]);
        assert!(cfg.validate().is_err()); // cosine not in default methods
    }
}
