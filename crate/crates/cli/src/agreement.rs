//! Judge-agreement runs over a pair of label files.
//!
//! Correlation p-values use the standard approximations: Student-t for
//! Spearman rho (t = r sqrt((n-2)/(1-r^2)), n-2 df) and the normal
//! approximation for Kendall tau (z = 3 tau sqrt(n(n-1)) /
//! sqrt(2(2n+5))). Both are approximations, not exact permutation
//! values, and the output labels them as such.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use nrank_core::corpus::{Grade, Judge};
use nrank_core::metrics::{judge_agreement, AgreementStats};

use crate::formats::read_labels;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n_common: usize,
    pub rho: Option<f64>,
    /// Two-sided p for rho, Student-t approximation.
    pub rho_p_approx: Option<f64>,
    pub tau: Option<f64>,
    /// Two-sided p for tau, normal approximation.
    pub tau_p_approx: Option<f64>,
    pub exact_match: usize,
    pub exact_match_rate: f64,
    pub n_x: usize,
    pub n_y: usize,
    pub null_count_x: usize,
    pub null_count_y: usize,
    pub null_rate_x: f64,
    pub null_rate_y: f64,
}

pub fn rho_p_value(rho: f64, n: usize) -> Option<f64> {
    if n < 3 || rho.abs() >= 1.0 {
        // |rho| = 1 degenerates the t statistic; report the floor
        return (n >= 3).then_some(0.0);
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some(2.0 * (1.0 - dist.cdf(t.abs())))
}

pub fn tau_p_value(tau: f64, n: usize) -> Option<f64> {
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let z = 3.0 * tau * (nf * (nf - 1.0)).sqrt() / (2.0 * (2.0 * nf + 5.0)).sqrt();
    let dist = Normal::new(0.0, 1.0).ok()?;
    Some(2.0 * (1.0 - dist.cdf(z.abs())))
}

pub fn report_from_stats(stats: &AgreementStats) -> AgreementReport {
    AgreementReport {
        n_common: stats.n_common,
        rho: stats.rho,
        rho_p_approx: stats.rho.and_then(|r| rho_p_value(r, stats.n_common)),
        tau: stats.tau,
        tau_p_approx: stats.tau.and_then(|t| tau_p_value(t, stats.n_common)),
        exact_match: stats.exact_match,
        exact_match_rate: stats.exact_match_rate,
        n_x: stats.n_x,
        n_y: stats.n_y,
        null_count_x: stats.null_count_x,
        null_count_y: stats.null_count_y,
        null_rate_x: stats.null_rate_x,
        null_rate_y: stats.null_rate_y,
    }
}

/// Load two label files (either schema) and compute agreement.
pub fn agreement_from_files(x_path: &Path, y_path: &Path) -> Result<AgreementReport> {
    let to_map = |labels: Vec<nrank_core::corpus::JudgeLabel>| -> BTreeMap<String, Option<Grade>> {
        labels.into_iter().map(|l| (l.story_id, l.grade)).collect()
    };
    // judge tags are irrelevant here; the files are arbitrary annotators
    let x = to_map(read_labels(x_path, Judge::A)?);
    let y = to_map(read_labels(y_path, Judge::B)?);
    let stats = judge_agreement(&x, &y)?;
    Ok(report_from_stats(&stats))
}
