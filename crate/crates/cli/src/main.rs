//! Command-line surface. Exit codes: 0 ok, 2 usage, 3 data error,
//! 4 leakage violation, 5 alignment violation.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use nrank::agreement::agreement_from_files;
use nrank::config::RunConfig;
use nrank::formats::read_eval_rows;
use nrank::pipeline::{self, RunPaths};
use nrank_core::stats::{paired_diffs, sign_flip_test, SignFlipMode};
use nrank_core::synth::SynthConfig;

#[derive(Parser)]
#[command(name = "nrank", version, about = "Leakage-free two-judge within-query ranking harness")]
struct Cli {
    /// Worker threads for per-query stages (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunDir {
    /// Run directory holding run.toml and artifacts.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (stories, judges, embeddings,
    /// teacher logits, latent truth).
    Synth {
        /// Generator settings (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_queries: Option<usize>,
    },
    /// Validate and index a corpus into a run directory.
    Ingest {
        #[arg(long)]
        stories: PathBuf,
        #[arg(long)]
        labels_a: PathBuf,
        #[arg(long)]
        labels_b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run-config template to seed the directory with.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Build candidate pools and pool statistics.
    Pools {
        #[command(flatten)]
        dir: RunDir,
        /// Eligibility cutoff; persisted into run.toml when given.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Generate seeded query-level split manifests.
    Split {
        #[command(flatten)]
        dir: RunDir,
        /// Comma list or inclusive range, e.g. "0,1,2" or "0..9".
        #[arg(long)]
        seeds: Option<String>,
        /// train,dev,test sizes, e.g. "239,34,70".
        #[arg(long)]
        sizes: Option<String>,
    },
    /// Train a supervised ranker for each split seed.
    Train {
        #[command(flatten)]
        dir: RunDir,
        /// pointwise | pairwise | listmle | distill
        #[arg(long)]
        method: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rank test pools with one method.
    Rank {
        #[command(flatten)]
        dir: RunDir,
        #[arg(long)]
        method: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute per-query metrics from stored predictions.
    Eval {
        #[command(flatten)]
        dir: RunDir,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Recompute metrics across evaluation cutoffs.
    #[command(name = "sweep-k")]
    SweepK {
        #[command(flatten)]
        dir: RunDir,
        /// Comma list, e.g. "1,3,5,10".
        #[arg(long)]
        ks: Option<String>,
    },
    /// Pool-size-bin sensitivity table.
    Bins {
        #[command(flatten)]
        dir: RunDir,
        /// Small/medium boundary pair, e.g. "35,50".
        #[arg(long)]
        thresholds: Option<String>,
    },
    /// Paired sign-flip permutation test between two methods.
    Sigtest {
        #[command(flatten)]
        dir: RunDir,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long, default_value = "ndcg@5")]
        metric: String,
        #[arg(long, default_value_t = 50_000)]
        perms: u64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Inter-judge agreement between two label files.
    Agreement {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        /// Write the JSON report here as well as stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate summary/sigtest/bins/ksweep tables from stored rows.
    Report {
        #[command(flatten)]
        dir: RunDir,
    },
    /// Alignment, leakage-audit, and split-guard checks.
    Verify {
        #[command(flatten)]
        dir: RunDir,
    },
    /// Full pipeline into a config-addressed run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_seed_list(text: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().context("seed range start")?;
        let b: u64 = b.trim().parse().context("seed range end")?;
        if a > b {
            bail!("empty seed range {text}");
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("seed {s:?}")))
        .collect()
}

fn parse_usize_list(text: &str, expected: usize, what: &str) -> Result<Vec<usize>> {
    let values: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("{what} {s:?}")))
        .collect::<Result<_>>()?;
    if expected > 0 && values.len() != expected {
        bail!("{what} needs {expected} comma-separated values, got {}", values.len());
    }
    Ok(values)
}

fn load_run(dir: &RunDir) -> Result<(RunConfig, RunPaths)> {
    let paths = RunPaths::new(&dir.run);
    let cfg = RunConfig::load(&paths.config())
        .with_context(|| format!("no run.toml in {} (run `ingest` first)", dir.run.display()))?;
    Ok((cfg, paths))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // best effort; later calls in the same process reuse the pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(pipeline::exit_code_for(&err) as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth { config, out, seed, n_queries } => {
            let mut cfg: SynthConfig = match config {
                Some(path) => toml::from_str(&std::fs::read_to_string(&path)?)
                    .with_context(|| format!("parsing {}", path.display()))?,
                None => SynthConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(n) = n_queries {
                cfg.n_queries = n;
            }
            pipeline::write_synth_dir(&out, &cfg)?;
            println!("{}", out.display());
            Ok(())
        }
        Command::Ingest { stories, labels_a, labels_b, out, config } => {
            let mut cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            cfg.inputs.stories = Some(stories);
            cfg.inputs.labels_a = Some(labels_a);
            cfg.inputs.labels_b = Some(labels_b);
            let paths = RunPaths::new(&out);
            let stats = pipeline::stage_ingest(&cfg, &paths)?;
            cfg.save(&paths.config())?;
            println!("{}", paths.corpus_stats().display());
            println!(
                "stories {} queries {} null_a {} ({:.2}%) null_b {} ({:.2}%)",
                stats.n_stories,
                stats.n_queries,
                stats.null_count_a,
                100.0 * stats.null_rate_a,
                stats.null_count_b,
                100.0 * stats.null_rate_b
            );
            Ok(())
        }
        Command::Pools { dir, k } => {
            let (mut cfg, paths) = load_run(&dir)?;
            if let Some(k) = k {
                cfg.run.k = k;
                cfg.validate()?;
                cfg.save(&paths.config())?;
            }
            pipeline::stage_pools(&cfg, &paths)?;
            println!("{}", paths.pools().display());
            println!("{}", paths.pool_stats_csv().display());
            Ok(())
        }
        Command::Split { dir, seeds, sizes } => {
            let (mut cfg, paths) = load_run(&dir)?;
            if let Some(seeds) = seeds {
                cfg.run.seeds = parse_seed_list(&seeds)?;
            }
            if let Some(sizes) = sizes {
                let v = parse_usize_list(&sizes, 3, "sizes")?;
                cfg.run.sizes = [v[0], v[1], v[2]];
            }
            cfg.validate()?;
            cfg.save(&paths.config())?;
            let manifests = pipeline::stage_split(&cfg, &paths)?;
            for m in &manifests {
                println!("{}", paths.split(m.seed).display());
            }
            Ok(())
        }
        Command::Train { dir, method, seed } => {
            let (cfg, paths) = load_run(&dir)?;
            let seeds = seed.map(|s| vec![s]).unwrap_or_else(|| cfg.run.seeds.clone());
            if !nrank::config::method_needs_training(&method) {
                bail!("method {method:?} is not trainable (pointwise|pairwise|listmle|distill)");
            }
            pipeline::stage_train(&cfg, &paths, &[method.clone()], &seeds)?;
            for s in seeds {
                println!("{}", paths.checkpoint(&method, s).display());
            }
            Ok(())
        }
        Command::Rank { dir, method, seed } => {
            let (cfg, paths) = load_run(&dir)?;
            if !nrank::config::KNOWN_METHODS.contains(&method.as_str()) {
                bail!("unknown method {method:?}");
            }
            let seeds = seed.map(|s| vec![s]).unwrap_or_else(|| cfg.run.seeds.clone());
            pipeline::stage_rank(&cfg, &paths, &[method.clone()], &seeds)?;
            for s in seeds {
                println!("{}", paths.predictions(&method, s).display());
            }
            Ok(())
        }
        Command::Eval { dir, k } => {
            let (mut cfg, paths) = load_run(&dir)?;
            if let Some(k) = k {
                cfg.run.k = k;
                cfg.validate()?;
                cfg.save(&paths.config())?;
            }
            let rows = pipeline::stage_eval(&cfg, &paths, &cfg.run.methods, &cfg.run.seeds)?;
            nrank::report::write_summaries(&cfg, &paths, &rows)?;
            nrank::report::write_main_table(&cfg, &paths, &rows)?;
            println!("{}", paths.eval_rows().display());
            println!("{}", paths.summary_csv().display());
            Ok(())
        }
        Command::SweepK { dir, ks } => {
            let (mut cfg, paths) = load_run(&dir)?;
            if let Some(ks) = ks {
                cfg.ksweep.ks = parse_usize_list(&ks, 0, "ks")?;
                cfg.validate()?;
                cfg.save(&paths.config())?;
            }
            let lists = pipeline::load_ranked_lists(&paths, &cfg.run.methods, &cfg.run.seeds)?;
            let grades = pipeline::eval_grades_for_report(&cfg, &paths)?;
            nrank::report::write_ksweep(&cfg, &paths, &lists, &grades)?;
            println!("{}", paths.ksweep_csv().display());
            Ok(())
        }
        Command::Bins { dir, thresholds } => {
            let (mut cfg, paths) = load_run(&dir)?;
            if let Some(t) = thresholds {
                let v = parse_usize_list(&t, 2, "thresholds")?;
                cfg.bins.thresholds = [v[0], v[1]];
                cfg.validate()?;
                cfg.save(&paths.config())?;
            }
            let rows = read_eval_rows(&paths.eval_rows())?;
            nrank::report::write_bins(&cfg, &paths, &rows)?;
            println!("{}", paths.bins_csv().display());
            Ok(())
        }
        Command::Sigtest { dir, a, b, metric, perms, seed } => {
            let (cfg, paths) = load_run(&dir)?;
            for method in [&a, &b] {
                if !cfg.run.methods.contains(method) {
                    bail!("method {method:?} is not part of this run");
                }
            }
            let rows = read_eval_rows(&paths.eval_rows())?;
            let diffs = paired_diffs(&rows, &a, &b, &metric)?;
            if diffs.diffs.is_empty() {
                return Err(anyhow!("no aligned ({a}, {b}) rows for metric {metric}"));
            }
            let result = sign_flip_test(
                &diffs.diffs,
                perms,
                seed.unwrap_or(cfg.sigtest.seed),
                SignFlipMode::Auto,
            )?;
            println!(
                "{} vs {} {}: delta {:+.6} p {:.6} ({} rows, {} dropped, {})",
                a,
                b,
                metric,
                result.delta_mean,
                result.p_two_sided,
                result.n_rows,
                diffs.n_dropped,
                if result.exact { "exact" } else { "mc" }
            );
            Ok(())
        }
        Command::Agreement { x, y, out } => {
            let report = agreement_from_files(&x, &y)?;
            let json = serde_json::to_string_pretty(&report)?;
            if let Some(path) = out {
                std::fs::write(&path, json.clone() + "\n")?;
            }
            println!("{json}");
            Ok(())
        }
        Command::Report { dir } => {
            let (cfg, paths) = load_run(&dir)?;
            pipeline::regenerate_reports(&cfg, &paths)?;
            println!("{}", paths.main_table_tex().display());
            println!("{}", paths.summary_csv().display());
            Ok(())
        }
        Command::Verify { dir } => {
            let (cfg, paths) = load_run(&dir)?;
            let report = pipeline::verify(&cfg, &paths)?;
            if report.clean() {
                println!("ok");
                Ok(())
            } else {
                eprint!("{}", report.describe());
                if !report.audit_violations.is_empty() || !report.split_violations.is_empty() {
                    Err(nrank_core::Error::Leakage("verification failed".into()).into())
                } else {
                    Err(nrank_core::Error::Alignment("verification failed".into()).into())
                }
            }
        }
        Command::Run { config } => {
            let cfg = RunConfig::load(&config)?;
            let paths = pipeline::run_all(&cfg, None)?;
            println!("{}", paths.dir.display());
            println!("{}", paths.summary_csv().display());
            println!("{}", paths.main_table_tex().display());
            println!("{}", paths.sigtest_csv().display());
            println!("{}", paths.audit().display());
            Ok(())
        }
    }
}
