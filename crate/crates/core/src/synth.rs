//! Deterministic synthetic corpus generator: queries, stories, two
//! correlated judges with configurable noise and null rates, latent
//! truth, grade-informative embeddings, and teacher logits.
//!
//! Grade model: a latent quality R* ~ U(0.5, 5.5) per story; each judge
//! reports clamp(round(R* + noise * eps), 1, 5) with standard-normal
//! eps, and nulls injected iid at the configured rate. Equal judge noise
//! maps to inter-judge Spearman rho roughly as (10^6-sample Monte-Carlo
//! calibration of this model):
//!
//! | noise | 0.0  | 0.3  | 0.5  | 0.7  | 1.0  | 1.5  | 1.8  | 2.1  | 2.5  |
//! | rho   | 1.00 | 0.93 | 0.87 | 0.80 | 0.67 | 0.47 | 0.37 | 0.30 | 0.23 |
//!
//! Story text repeats the constraint terms in proportion to R* so
//! lexical rankers receive nonzero signal; embeddings carry R* in a
//! designated signal coordinate plus hash noise so learned rankers can
//! recover the ordering; teacher logits are a strictly increasing
//! function of R* (hence consistent with supervision grades up to
//! rounding), plus optional noise.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use libm::round;
use serde::{Deserialize, Serialize};

use crate::corpus::{enumerate_queries, JudgeLabel, Judge, Query};
use crate::distill::TeacherScores;
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};

use crate::rng::SplitMix64;
use crate::StoryId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_queries: usize,
    pub pool_min: usize,
    pub pool_max: usize,
    pub latent_noise_a: f64,
    pub latent_noise_b: f64,
    pub null_rate_a: f64,
    pub null_rate_b: f64,
    pub seed: u64,
    /// Embedding dimension emitted alongside the corpus.
    pub dim: usize,
    /// Gaussian noise added to teacher logits (0 = noiseless teacher).
    pub teacher_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_queries: 20,
            pool_min: 10,
            pool_max: 20,
            latent_noise_a: 0.7,
            latent_noise_b: 0.7,
            null_rate_a: 0.1,
            null_rate_b: 0.15,
            seed: 0,
            dim: 16,
            teacher_noise: 0.0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_queries == 0 || self.n_queries > 343 {
            return Err(Error::Domain(format!(
                "n_queries must be in 1..=343, got {}",
                self.n_queries
            )));
        }
        if self.pool_min == 0 || self.pool_min > self.pool_max {
            return Err(Error::Domain(format!(
                "pool size range [{}, {}] is empty",
                self.pool_min, self.pool_max
            )));
        }
        for (name, rate) in [("null_rate_a", self.null_rate_a), ("null_rate_b", self.null_rate_b)] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Domain(format!("{name} must be in [0, 1], got {rate}")));
            }
        }
        if self.latent_noise_a < 0.0 || self.latent_noise_b < 0.0 || self.teacher_noise < 0.0 {
            return Err(Error::Domain(String::from("noise levels must be >= 0")));
        }
        if self.dim < 2 {
            return Err(Error::Domain(String::from("embedding dim must be >= 2")));
        }
        Ok(())
    }
}

/// Everything one synthetic run produces, in ingest-ready shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub stories: Vec<(StoryId, Query, String)>,
    pub labels_a: Vec<JudgeLabel>,
    pub labels_b: Vec<JudgeLabel>,
    /// (story_id, R*) latent truth, persisted for oracle tests.
    pub latent: Vec<(StoryId, f64)>,
    pub embeddings: EmbeddingTable,
    pub teacher: TeacherScores,
}

const FILLER: [&str; 24] = [
    "the", "a", "little", "child", "morning", "walked", "home", "friend", "school", "market",
    "sun", "river", "smiled", "helped", "played", "family", "garden", "evening", "quiet", "warm",
    "together", "learned", "shared", "day",
];

fn clamp_grade(x: f64) -> i64 {
    (round(x) as i64).clamp(1, 5)
}

fn judge_raw(grade: i64, is_null: bool) -> String {
    if is_null {
        // deliberately unparseable, like a judge ignoring the format
        format!("I would rate this story a {grade}.")
    } else {
        format!("{{\"score\": {grade}}}")
    }
}

fn story_text(query: &Query, r_star: f64, rng: &mut SplitMix64) -> String {
    let mut words: Vec<String> = Vec::new();
    words.push(format!("for age {}", query.age));
    let n_filler = 15 + rng.below(16) as usize;
    for _ in 0..n_filler {
        words.push(String::from(FILLER[rng.below(FILLER.len() as u64) as usize]));
    }
    // grade-correlated keyword injection: constraint terms repeat
    // round(R*) times, so term frequency tracks latent quality
    let moral = query.moral.to_lowercase();
    let culture = query.culture.to_lowercase();
    for _ in 0..clamp_grade(r_star) {
        words.push(moral.clone());
        words.push(culture.clone());
    }
    words.join(" ")
}

fn story_embedding(r_star: f64, dim: usize, rng: &mut SplitMix64) -> Vec<f64> {
    // signal coordinate grows with R*; the rest is hash noise. Left
    // unnormalized: cosine against the query direction is monotone in
    // the signal coordinate either way, and the spread keeps the
    // latent recoverable by small learners.
    let mut v = Vec::with_capacity(dim);
    v.push(0.4 + 0.3 * (r_star - 0.5));
    for _ in 1..dim {
        v.push(0.05 * rng.next_normal());
    }
    v
}

fn query_embedding(dim: usize, rng: &mut SplitMix64) -> Vec<f64> {
    let mut v = Vec::with_capacity(dim);
    v.push(1.0);
    for _ in 1..dim {
        v.push(0.05 * rng.next_normal());
    }
    v
}

/// Generate a synthetic corpus. Same config, same bytes.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut all_queries = enumerate_queries();
    all_queries.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    SplitMix64::derived(cfg.seed, "query-sample").shuffle(&mut all_queries);
    let mut queries: Vec<Query> = all_queries.into_iter().take(cfg.n_queries).collect();
    queries.sort_by(|a, b| a.query_id.cmp(&b.query_id));

    let mut out = SynthOutput {
        stories: Vec::new(),
        labels_a: Vec::new(),
        labels_b: Vec::new(),
        latent: Vec::new(),
        embeddings: EmbeddingTable::new(cfg.dim)?,
        teacher: TeacherScores::new(),
    };

    for query in &queries {
        let qid = &query.query_id;
        let mut q_rng = SplitMix64::derived(cfg.seed, &format!("embed-q|{qid}"));
        out.embeddings.insert(qid.clone(), query_embedding(cfg.dim, &mut q_rng))?;
        let span = (cfg.pool_max - cfg.pool_min + 1) as u64;
        let pool_size = cfg.pool_min
            + SplitMix64::derived(cfg.seed, &format!("pool-size|{qid}")).below(span) as usize;
        for idx in 0..pool_size {
            let sid = format!("{qid}:{idx:03}");
            let r_star =
                0.5 + 5.0 * SplitMix64::derived(cfg.seed, &format!("latent|{sid}")).next_f64();

            let grade_a = clamp_grade(
                r_star
                    + cfg.latent_noise_a
                        * SplitMix64::derived(cfg.seed, &format!("judge-a|{sid}")).next_normal(),
            );
            let grade_b = clamp_grade(
                r_star
                    + cfg.latent_noise_b
                        * SplitMix64::derived(cfg.seed, &format!("judge-b|{sid}")).next_normal(),
            );
            let null_a = SplitMix64::derived(cfg.seed, &format!("null-a|{sid}"))
                .next_bool(cfg.null_rate_a);
            let null_b = SplitMix64::derived(cfg.seed, &format!("null-b|{sid}"))
                .next_bool(cfg.null_rate_b);

            let mut text_rng = SplitMix64::derived(cfg.seed, &format!("text|{sid}"));
            out.stories.push((sid.clone(), query.clone(), story_text(query, r_star, &mut text_rng)));
            out.labels_a.push(JudgeLabel::from_raw(sid.clone(), Judge::A, judge_raw(grade_a, null_a)));
            out.labels_b.push(JudgeLabel::from_raw(sid.clone(), Judge::B, judge_raw(grade_b, null_b)));
            out.latent.push((sid.clone(), r_star));

            let mut e_rng = SplitMix64::derived(cfg.seed, &format!("embed-s|{sid}"));
            out.embeddings.insert(sid.clone(), story_embedding(r_star, cfg.dim, &mut e_rng))?;

            let logit = 1.25 * (r_star - 3.0)
                + cfg.teacher_noise
                    * SplitMix64::derived(cfg.seed, &format!("teacher|{sid}")).next_normal();
            out.teacher.insert(qid.clone(), sid, logit)?;
        }
    }
    Ok(out)
}

/// The query ids a config will generate (handy for tests and docs).
pub fn selected_query_ids(cfg: &SynthConfig) -> Result<BTreeSet<String>> {
    cfg.validate()?;
    let mut all = enumerate_queries();
    all.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    SplitMix64::derived(cfg.seed, "query-sample").shuffle(&mut all);
    Ok(all.into_iter().take(cfg.n_queries).map(|q| q.query_id).collect())
}
