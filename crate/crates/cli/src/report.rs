//! CSV and LaTeX emission. Reports are pure functions of the stored
//! eval rows (plus predictions for the k-sweep), so regenerating them
//! reproduces identical bytes. Leaky runs poison every emitted file
//! with a banner line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;

use nrank_core::corpus::Grade;
use nrank_core::neural::TrainTraceRow;
use nrank_core::pools::PoolStats;
use nrank_core::stats::{
    bin_by_pool_size, k_sweep, macro_by_seed, mean_std_over_seeds, paired_diffs, sign_flip_test,
    EvalRow, MethodSummary, PoolBin, RankedList,
};
use nrank_core::StoryId;

use crate::config::{RunConfig, SCORE_INFORMATIVE};
use crate::pipeline::RunPaths;

impl RunPaths {
    pub fn summary_csv(&self) -> PathBuf {
        self.dir.join("summary.csv")
    }

    pub fn diagnostics_csv(&self) -> PathBuf {
        self.dir.join("diagnostics.csv")
    }

    pub fn sigtest_csv(&self) -> PathBuf {
        self.dir.join("sigtest.csv")
    }

    pub fn sigtest_tex(&self) -> PathBuf {
        self.dir.join("sigtest.tex")
    }

    pub fn bins_csv(&self) -> PathBuf {
        self.dir.join("bins.csv")
    }

    pub fn bins_tex(&self) -> PathBuf {
        self.dir.join("bins.tex")
    }

    pub fn ksweep_csv(&self) -> PathBuf {
        self.dir.join("ksweep.csv")
    }

    pub fn ksweep_tex(&self) -> PathBuf {
        self.dir.join("ksweep.tex")
    }

    pub fn main_table_tex(&self) -> PathBuf {
        self.dir.join("main_table.tex")
    }
}

/// Banner line for leaky runs; `prefix` is the comment leader.
fn banner(cfg: &RunConfig, prefix: &str) -> Option<String> {
    (cfg.judges.evaluation == "b").then(|| {
        format!("{prefix} LEAKY EVALUATION: metrics computed against supervision labels, not an independent judge")
    })
}

fn write_lines(path: &Path, banner: Option<String>, lines: Vec<String>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::new();
    if let Some(b) = banner {
        out.push_str(&b);
        out.push('\n');
    }
    for line in lines {
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Means print at 3 decimals, stds at 2, matching the table style.
fn tex_mean_std(mean: f64, std: Option<f64>) -> String {
    match std {
        Some(s) => format!("{mean:.3} $\\pm$ {s:.2}"),
        None => format!("{mean:.3}"),
    }
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_pool_stats_csv(
    path: &Path,
    rows: &[(String, PoolStats)],
    cfg: &RunConfig,
) -> Result<()> {
    let mut lines = vec!["population,variant,n,min,median,mean,max".to_string()];
    for (population, s) in rows {
        lines.push(format!(
            "{population},{},{},{},{},{},{}",
            s.variant.name(),
            s.n,
            s.min,
            s.median,
            s.mean,
            s.max
        ));
    }
    write_lines(path, banner(cfg, "#"), lines)
}

pub fn write_trace_csv(path: &Path, trace: &[TrainTraceRow]) -> Result<()> {
    let mut lines = vec!["epoch,train_loss,dev_metric".to_string()];
    for row in trace {
        lines.push(format!("{},{},{}", row.epoch, row.train_loss, row.dev_metric));
    }
    write_lines(path, None, lines)
}

/// Methods in config order first, then any stragglers alphabetically.
fn ordered_methods<'a>(cfg: &'a RunConfig, summaries: &'a [MethodSummary]) -> Vec<&'a str> {
    let mut seen: Vec<&str> = Vec::new();
    for m in &cfg.run.methods {
        if summaries.iter().any(|s| s.method == *m) {
            seen.push(m);
        }
    }
    for s in summaries {
        if !seen.contains(&s.method.as_str()) {
            seen.push(&s.method);
        }
    }
    seen
}

fn summaries_for(rows: &[EvalRow], metric: &str) -> Vec<MethodSummary> {
    mean_std_over_seeds(&macro_by_seed(rows, metric))
}

/// summary.csv (all methods x metrics) and diagnostics.csv (the
/// correlation rows for methods whose scores are not real-valued
/// relevance estimates, kept out of the main table).
pub fn write_summaries(cfg: &RunConfig, paths: &RunPaths, rows: &[EvalRow]) -> Result<()> {
    let metrics = [
        format!("ndcg@{}", cfg.run.k),
        format!("err@{}", cfg.run.k),
        "tau_b".to_string(),
        "rho".to_string(),
    ];
    let mut lines = vec!["method,metric,mean,std,n_seeds".to_string()];
    let mut diag = vec!["method,metric,mean,std,n_seeds".to_string()];
    for metric in &metrics {
        let summaries = summaries_for(rows, metric);
        for method in ordered_methods(cfg, &summaries) {
            let s = summaries.iter().find(|s| s.method == method).unwrap();
            let line = format!(
                "{},{},{},{},{}",
                s.method,
                s.metric,
                s.mean,
                csv_opt(s.std),
                s.n_seeds
            );
            let is_correlation = metric == "tau_b" || metric == "rho";
            if is_correlation && !SCORE_INFORMATIVE.contains(&method) {
                diag.push(line);
            } else {
                lines.push(line);
            }
        }
    }
    write_lines(&paths.summary_csv(), banner(cfg, "#"), lines)?;
    write_lines(&paths.diagnostics_csv(), banner(cfg, "#"), diag)?;
    Ok(())
}

/// The main LaTeX table: one row per method, nDCG/ERR for everyone,
/// correlations only for score-informative methods ("--" otherwise).
pub fn write_main_table(cfg: &RunConfig, paths: &RunPaths, rows: &[EvalRow]) -> Result<()> {
    let ndcg = summaries_for(rows, &format!("ndcg@{}", cfg.run.k));
    let err = summaries_for(rows, &format!("err@{}", cfg.run.k));
    let tau = summaries_for(rows, "tau_b");
    let rho = summaries_for(rows, "rho");
    let cell = |summaries: &[MethodSummary], method: &str| -> String {
        summaries
            .iter()
            .find(|s| s.method == method)
            .map(|s| tex_mean_std(s.mean, s.std))
            .unwrap_or_else(|| "--".to_string())
    };
    let mut lines = vec![format!(
        "% method & nDCG@{k} & ERR@{k} & tau_b & rho \\\\",
        k = cfg.run.k
    )];
    for method in ordered_methods(cfg, &ndcg) {
        let (tau_cell, rho_cell) = if SCORE_INFORMATIVE.contains(&method) {
            (cell(&tau, method), cell(&rho, method))
        } else {
            ("--".to_string(), "--".to_string())
        };
        lines.push(format!(
            "{method} & {} & {} & {} & {} \\\\",
            cell(&ndcg, method),
            cell(&err, method),
            tau_cell,
            rho_cell
        ));
    }
    write_lines(&paths.main_table_tex(), banner(cfg, "%"), lines)
}

/// Paired sign-flip tests for every configured (pair, metric).
pub fn write_sigtests(cfg: &RunConfig, paths: &RunPaths, rows: &[EvalRow]) -> Result<()> {
    let mut csv = vec!["a,b,metric,delta,p,n_rows,n_dropped,mode".to_string()];
    let mut tex = vec!["% comparison (A vs B) & metric & delta & p \\\\".to_string()];
    for pair in &cfg.sigtest.pairs {
        for metric in &cfg.sigtest.metrics {
            let diffs = paired_diffs(rows, &pair[0], &pair[1], metric)?;
            if diffs.diffs.is_empty() {
                csv.push(format!("{},{},{metric},,,0,{},skipped", pair[0], pair[1], diffs.n_dropped));
                continue;
            }
            let result = sign_flip_test(
                &diffs.diffs,
                cfg.sigtest.n_perm,
                cfg.sigtest.seed,
                cfg.sigtest.mode,
            )?;
            let mode = if result.exact { "exact" } else { "mc" };
            csv.push(format!(
                "{},{},{metric},{},{},{},{},{mode}",
                pair[0], pair[1], result.delta_mean, result.p_two_sided, result.n_rows, diffs.n_dropped
            ));
            // smoothed Monte-Carlo estimates at the floor print as an
            // inequality, mirroring how such rows are usually reported
            let floor = 1.0 / (1.0 + cfg.sigtest.n_perm as f64);
            let p_str = if !result.exact && (result.p_two_sided - floor).abs() < 1e-15 {
                "$<10^{-4}$".to_string()
            } else {
                format!("{:.4}", result.p_two_sided)
            };
            tex.push(format!(
                "{} vs {} & {metric} & {:+.3} & {p_str} \\\\",
                pair[0], pair[1], result.delta_mean
            ));
        }
    }
    write_lines(&paths.sigtest_csv(), banner(cfg, "#"), csv)?;
    write_lines(&paths.sigtest_tex(), banner(cfg, "%"), tex)?;
    Ok(())
}

/// Pool-size-bin sensitivity for the primary metric.
pub fn write_bins(cfg: &RunConfig, paths: &RunPaths, rows: &[EvalRow]) -> Result<()> {
    let metric = format!("ndcg@{}", cfg.run.k);
    let thresholds = (cfg.bins.thresholds[0], cfg.bins.thresholds[1]);
    let bins = bin_by_pool_size(rows, &metric, thresholds)?;
    let mut csv = vec!["method,metric,bin,mean,std,n_seeds".to_string()];
    for b in &bins {
        csv.push(format!(
            "{},{},{},{},{},{}",
            b.method,
            b.metric,
            b.bin.name(),
            csv_opt(b.mean),
            csv_opt(b.std),
            b.n_seeds
        ));
    }
    let mut tex = vec![format!(
        "% method & small (<= {}) & medium ({}-{}) & large (> {}) \\\\",
        thresholds.0,
        thresholds.0 + 1,
        thresholds.1,
        thresholds.1
    )];
    let methods: Vec<&str> = {
        let mut m: Vec<&str> = Vec::new();
        for method in &cfg.run.methods {
            if bins.iter().any(|b| b.method == *method) {
                m.push(method);
            }
        }
        m
    };
    for method in methods {
        let cell = |bin: PoolBin| {
            bins.iter()
                .find(|b| b.method == method && b.bin == bin)
                .and_then(|b| b.mean.map(|m| tex_mean_std(m, b.std)))
                .unwrap_or_else(|| "--".to_string())
        };
        tex.push(format!(
            "{method} & {} & {} & {} \\\\",
            cell(PoolBin::Small),
            cell(PoolBin::Medium),
            cell(PoolBin::Large)
        ));
    }
    write_lines(&paths.bins_csv(), banner(cfg, "#"), csv)?;
    write_lines(&paths.bins_tex(), banner(cfg, "%"), tex)?;
    Ok(())
}

/// Metric recomputation at each cutoff from the stored rankings; the
/// CSV doubles as plot data for the sweep figure.
pub fn write_ksweep(
    cfg: &RunConfig,
    paths: &RunPaths,
    lists: &[RankedList],
    grades: &BTreeMap<StoryId, Grade>,
) -> Result<()> {
    let (summaries, _) = k_sweep(lists, grades, &cfg.ksweep.ks)?;
    let mut csv = vec!["method,metric,mean,std,n_seeds".to_string()];
    for metric in cfg
        .ksweep
        .ks
        .iter()
        .flat_map(|k| [format!("ndcg@{k}"), format!("err@{k}")])
    {
        for method in ordered_methods(cfg, &summaries) {
            if let Some(s) = summaries.iter().find(|s| s.method == method && s.metric == metric) {
                csv.push(format!(
                    "{},{},{},{},{}",
                    s.method,
                    s.metric,
                    s.mean,
                    csv_opt(s.std),
                    s.n_seeds
                ));
            }
        }
    }
    let header = cfg
        .ksweep
        .ks
        .iter()
        .map(|k| format!("nDCG@{k}"))
        .collect::<Vec<_>>()
        .join(" & ");
    let mut tex = vec![format!("% method & {header} \\\\")];
    for method in ordered_methods(cfg, &summaries) {
        let cells: Vec<String> = cfg
            .ksweep
            .ks
            .iter()
            .map(|k| {
                summaries
                    .iter()
                    .find(|s| s.method == method && s.metric == format!("ndcg@{k}"))
                    .map(|s| tex_mean_std(s.mean, s.std))
                    .unwrap_or_else(|| "--".to_string())
            })
            .collect();
        tex.push(format!("{method} & {} \\\\", cells.join(" & ")));
    }
    write_lines(&paths.ksweep_csv(), banner(cfg, "#"), csv)?;
    write_lines(&paths.ksweep_tex(), banner(cfg, "%"), tex)?;
    Ok(())
}
