//! Graded within-query ranking metrics.
//!
//! nDCG uses the exponential gain g(r) = 2^r - 1 with the standard
//! log2(i+1) position discount; ERR is the cascade metric with stop
//! probability R(r) = (2^r - 1) / 2^5. Rank correlations handle ties via
//! average ranks and return `None` (not NaN) when undefined, so the
//! aggregation layer can track the count of defined queries explicitly.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use libm::{log2, sqrt};
use serde::{Deserialize, Serialize};

use crate::corpus::Grade;
use crate::error::{Error, Result};
use crate::StoryId;

fn grade_of(grades: &BTreeMap<StoryId, Grade>, id: &str) -> Result<Grade> {
    grades
        .get(id)
        .copied()
        .ok_or_else(|| Error::Data(format!("no grade for ranked story {id}")))
}

/// nDCG@k of a ranked list against graded labels.
///
/// DCG = sum_{i=1..min(k,n)} (2^{r_i} - 1) / log2(i + 1); the ideal DCG
/// re-sorts the same grades descending. Grades are >= 1 so IDCG > 0.
pub fn ndcg_at_k(ranked: &[StoryId], grades: &BTreeMap<StoryId, Grade>, k: usize) -> Result<f64> {
    if ranked.is_empty() {
        return Err(Error::Domain(String::from("ndcg over empty ranking")));
    }
    if k == 0 {
        return Err(Error::Domain(String::from("ndcg cutoff k must be >= 1")));
    }
    let gains: Vec<f64> = ranked
        .iter()
        .map(|id| grade_of(grades, id).map(|g| g.gain()))
        .collect::<Result<_>>()?;
    let mut ideal = gains.clone();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let depth = k.min(gains.len());
    let dcg: f64 = gains[..depth]
        .iter()
        .enumerate()
        .map(|(i, g)| g / log2(i as f64 + 2.0))
        .sum();
    let idcg: f64 = ideal[..depth]
        .iter()
        .enumerate()
        .map(|(i, g)| g / log2(i as f64 + 2.0))
        .sum();
    Ok(dcg / idcg)
}

/// ERR@k: expected reciprocal rank under the cascade user model.
///
/// ERR = sum_{i=1..min(k,n)} (1/i) R_i prod_{j<i} (1 - R_j) with
/// R(r) = (2^r - 1) / 2^5.
pub fn err_at_k(ranked: &[StoryId], grades: &BTreeMap<StoryId, Grade>, k: usize) -> Result<f64> {
    if ranked.is_empty() {
        return Err(Error::Domain(String::from("err over empty ranking")));
    }
    if k == 0 {
        return Err(Error::Domain(String::from("err cutoff k must be >= 1")));
    }
    let depth = k.min(ranked.len());
    let mut err = 0.0;
    let mut continue_prob = 1.0;
    for (i, id) in ranked[..depth].iter().enumerate() {
        let stop = grade_of(grades, id)?.stop_probability();
        err += continue_prob * stop / (i as f64 + 1.0);
        continue_prob *= 1.0 - stop;
    }
    Ok(err)
}

/// Average (fractional) ranks, 1-based; tied values share the mean of
/// the positions they occupy.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = alloc::vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the mean of ranks (i+1)..=(j+1)
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn check_paired(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Domain(format!(
            "correlation inputs of different lengths ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Domain(String::from("correlation needs length >= 2")));
    }
    Ok(())
}

fn tie_term(sorted: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        total += t * (t - 1.0) / 2.0;
        i = j + 1;
    }
    total
}

/// Merge sort on `y`, counting strict inversions (pairs i < j with
/// y[i] > y[j]). Equal elements merge from the left and count nothing.
fn count_inversions(y: &mut [f64], scratch: &mut [f64]) -> u64 {
    let n = y.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = 0;
    {
        let (left, right) = y.split_at_mut(mid);
        inv += count_inversions(left, scratch);
        inv += count_inversions(right, scratch);
    }
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if y[i] <= y[j] {
            scratch[k] = y[i];
            i += 1;
        } else {
            scratch[k] = y[j];
            j += 1;
            inv += (mid - i) as u64;
        }
        k += 1;
    }
    scratch[k..k + (mid - i)].copy_from_slice(&y[i..mid]);
    scratch[k + (mid - i)..n].copy_from_slice(&y[j..n]);
    y.copy_from_slice(&scratch[..n]);
    inv
}

/// Kendall tau-b with tie corrections, `None` when either input is
/// constant (the coefficient is undefined there).
///
/// Computed via Knight's O(n log n) scheme: sort by (x, y), take tie
/// counts from run lengths, and count discordant pairs as merge-sort
/// inversions of y.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    check_paired(x, y)?;
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let n0 = (n as f64) * (n as f64 - 1.0) / 2.0;
    let mut n1 = 0.0; // tie pairs in x
    let mut n3 = 0.0; // tie pairs in (x, y) jointly
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let mut joint = i;
        while joint <= j {
            let mut m = joint;
            while m + 1 <= j && y[order[m + 1]] == y[order[joint]] {
                m += 1;
            }
            let t = (m - joint + 1) as f64;
            n3 += t * (t - 1.0) / 2.0;
            joint = m + 1;
        }
        let t = (j - i + 1) as f64;
        n1 += t * (t - 1.0) / 2.0;
        i = j + 1;
    }

    let mut y_sorted_by_x: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let mut scratch = alloc::vec![0.0; n];
    let discordant = count_inversions(&mut y_sorted_by_x, &mut scratch) as f64;

    let mut y_sorted: Vec<f64> = y.into();
    y_sorted.sort_by(|a, b| a.total_cmp(b));
    let n2 = tie_term(&y_sorted);

    let denom_x = n0 - n1;
    let denom_y = n0 - n2;
    if denom_x == 0.0 || denom_y == 0.0 {
        return Ok(None);
    }
    let concordant_minus_discordant = n0 - n1 - n2 + n3 - 2.0 * discordant;
    Ok(Some(concordant_minus_discordant / sqrt(denom_x * denom_y)))
}

/// Spearman rho: Pearson correlation of average ranks, `None` when a
/// rank vector is constant.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    check_paired(x, y)?;
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    Ok(pearson(&rx, &ry))
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / sqrt(sxx * syy))
}

/// Agreement statistics between two judges' label maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    /// Ids with a valid grade from both judges.
    pub n_common: usize,
    pub rho: Option<f64>,
    pub tau: Option<f64>,
    pub exact_match: usize,
    pub exact_match_rate: f64,
    pub n_x: usize,
    pub n_y: usize,
    pub null_count_x: usize,
    pub null_count_y: usize,
    pub null_rate_x: f64,
    pub null_rate_y: f64,
}

/// Compare two label maps (id -> maybe-grade) over a shared id space.
///
/// Correlations and the exact-match rate are computed on the
/// intersection of ids where both grades are valid.
pub fn judge_agreement(
    labels_x: &BTreeMap<String, Option<Grade>>,
    labels_y: &BTreeMap<String, Option<Grade>>,
) -> Result<AgreementStats> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut exact = 0usize;
    for (id, gx) in labels_x {
        let (Some(gx), Some(Some(gy))) = (gx, labels_y.get(id)) else { continue };
        xs.push(gx.get() as f64);
        ys.push(gy.get() as f64);
        if gx == gy {
            exact += 1;
        }
    }
    if xs.is_empty() {
        return Err(Error::Domain(String::from(
            "judge agreement: empty valid intersection",
        )));
    }
    let n_common = xs.len();
    let (rho, tau) = if n_common >= 2 {
        (spearman_rho(&xs, &ys)?, kendall_tau_b(&xs, &ys)?)
    } else {
        (None, None)
    };
    let nulls = |m: &BTreeMap<String, Option<Grade>>| m.values().filter(|g| g.is_none()).count();
    let (n_x, n_y) = (labels_x.len(), labels_y.len());
    let (null_count_x, null_count_y) = (nulls(labels_x), nulls(labels_y));
    Ok(AgreementStats {
        n_common,
        rho,
        tau,
        exact_match: exact,
        exact_match_rate: exact as f64 / n_common as f64,
        n_x,
        n_y,
        null_count_x,
        null_count_y,
        null_rate_x: if n_x == 0 { 0.0 } else { null_count_x as f64 / n_x as f64 },
        null_rate_y: if n_y == 0 { 0.0 } else { null_count_y as f64 / n_y as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn grades(pairs: &[(&str, i64)]) -> BTreeMap<StoryId, Grade> {
        pairs.iter().map(|(id, g)| (id.to_string(), Grade::new(*g).unwrap())).collect()
    }

    fn ids(v: &[&str]) -> Vec<StoryId> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ndcg_ideal_order_is_one() {
        let g = grades(&[("a", 5), ("b", 3), ("c", 1)]);
        let n = ndcg_at_k(&ids(&["a", "b", "c"]), &g, 5).unwrap();
        assert!((n - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ndcg_all_tied_is_one() {
        let g = grades(&[("a", 2), ("b", 2), ("c", 2)]);
        let n = ndcg_at_k(&ids(&["c", "a", "b"]), &g, 2).unwrap();
        assert!((n - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ndcg_reversed_two_items() {
        // grades (5, 1) ranked worst-first at k=2:
        // DCG  = 1/log2(2) + 31/log2(3), IDCG = 31/log2(2) + 1/log2(3)
        let g = grades(&[("hi", 5), ("lo", 1)]);
        let n = ndcg_at_k(&ids(&["lo", "hi"]), &g, 2).unwrap();
        let dcg = 1.0 + 31.0 / log2(3.0);
        let idcg = 31.0 + 1.0 / log2(3.0);
        assert!((n - dcg / idcg).abs() < 1e-12);
        assert!((n - 0.6500).abs() < 1e-4);
    }

    #[test]
    fn ndcg_depth_saturates_at_pool_size() {
        let g = grades(&[("a", 4), ("b", 2)]);
        let at2 = ndcg_at_k(&ids(&["b", "a"]), &g, 2).unwrap();
        let at10 = ndcg_at_k(&ids(&["b", "a"]), &g, 10).unwrap();
        assert_eq!(at2, at10);
    }

    #[test]
    fn ndcg_missing_grade_is_data_error() {
        let g = grades(&[("a", 4)]);
        assert!(matches!(ndcg_at_k(&ids(&["a", "zz"]), &g, 2), Err(Error::Data(_))));
    }

    #[test]
    fn err_single_items() {
        let g5 = grades(&[("a", 5)]);
        assert!((err_at_k(&ids(&["a"]), &g5, 5).unwrap() - 31.0 / 32.0).abs() < 1e-15);
        let g1 = grades(&[("a", 1)]);
        assert!((err_at_k(&ids(&["a"]), &g1, 5).unwrap() - 1.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn err_two_item_cascade() {
        // (5, 3) in that order: 31/32 + (1/2)(7/32)(1/32)
        let g = grades(&[("a", 5), ("b", 3)]);
        let expect = 31.0 / 32.0 + 0.5 * (7.0 / 32.0) * (1.0 / 32.0);
        let got = err_at_k(&ids(&["a", "b"]), &g, 2).unwrap();
        assert!((got - expect).abs() < 1e-15);
        assert!((got - 0.97217).abs() < 1e-5);
    }

    #[test]
    fn err_swapping_better_item_earlier_never_decreases() {
        // exhaustive over all grade assignments and adjacent swaps, n = 3
        for g1 in 1..=5i64 {
            for g2 in 1..=5i64 {
                for g3 in 1..=5i64 {
                    let g = grades(&[("a", g1), ("b", g2), ("c", g3)]);
                    let base = err_at_k(&ids(&["a", "b", "c"]), &g, 3).unwrap();
                    if g2 > g1 {
                        let swapped = err_at_k(&ids(&["b", "a", "c"]), &g, 3).unwrap();
                        assert!(swapped >= base - 1e-15);
                    }
                    if g3 > g2 {
                        let swapped = err_at_k(&ids(&["a", "c", "b"]), &g, 3).unwrap();
                        assert!(swapped >= base - 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 30.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn tau_perfect_and_reversed() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y_rev = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(kendall_tau_b(&x, &x).unwrap(), Some(1.0));
        assert_eq!(kendall_tau_b(&x, &y_rev).unwrap(), Some(-1.0));
    }

    #[test]
    fn tau_with_ties_matches_pair_counting() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 3.0, 5.0, 1.0];
        // by hand: C=2, D=3, one y-tie pair
        // tau_b = (2-3)/sqrt((6-0)(6-1))
        let expect = -1.0 / (30.0f64).sqrt();
        let got = kendall_tau_b(&x, &y).unwrap().unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn tau_undefined_on_constant() {
        assert_eq!(kendall_tau_b(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), None);
        assert_eq!(kendall_tau_b(&[1.0, 2.0, 3.0], &[7.0, 7.0, 7.0]).unwrap(), None);
    }

    #[test]
    fn correlation_input_checks() {
        assert!(matches!(kendall_tau_b(&[1.0], &[1.0, 2.0]), Err(Error::Domain(_))));
        assert!(matches!(spearman_rho(&[1.0], &[1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn rho_monotone_transform_is_one() {
        let x = [0.3, 1.4, 2.2, 9.0, 4.4];
        let y: Vec<f64> = x.iter().map(|v| v * v + 1.0).collect(); // strictly increasing on x >= 0
        assert!((spearman_rho(&x, &y).unwrap().unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rho_undefined_on_constant() {
        assert_eq!(spearman_rho(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).unwrap(), None);
    }

    #[test]
    fn tau_rho_antisymmetric_in_x() {
        let x = [0.1, 0.9, 0.4, 0.4, 0.7, 0.2];
        let y = [2.0, 5.0, 3.0, 1.0, 5.0, 2.0];
        let neg_x: Vec<f64> = x.iter().map(|v| -v).collect();
        let t = kendall_tau_b(&x, &y).unwrap().unwrap();
        let t_neg = kendall_tau_b(&neg_x, &y).unwrap().unwrap();
        assert!((t + t_neg).abs() < 1e-12);
        let r = spearman_rho(&x, &y).unwrap().unwrap();
        let r_neg = spearman_rho(&neg_x, &y).unwrap().unwrap();
        assert!((r + r_neg).abs() < 1e-12);
    }

    fn label_map(pairs: &[(&str, Option<i64>)]) -> BTreeMap<String, Option<Grade>> {
        pairs
            .iter()
            .map(|(id, g)| (id.to_string(), g.and_then(Grade::new)))
            .collect()
    }

    #[test]
    fn agreement_identical_files() {
        let x = label_map(&[("a", Some(1)), ("b", Some(3)), ("c", Some(5)), ("d", None)]);
        let stats = judge_agreement(&x, &x).unwrap();
        assert_eq!(stats.n_common, 3);
        assert_eq!(stats.exact_match_rate, 1.0);
        assert_eq!(stats.rho, Some(1.0));
        assert_eq!(stats.tau, Some(1.0));
        assert_eq!(stats.null_count_x, 1);
        assert!((stats.null_rate_x - 0.25).abs() < 1e-15);
    }

    #[test]
    fn agreement_requires_common_valid_ids() {
        let x = label_map(&[("a", Some(1)), ("b", None)]);
        let y = label_map(&[("a", None), ("b", Some(2))]);
        assert!(matches!(judge_agreement(&x, &y), Err(Error::Domain(_))));
    }
}
