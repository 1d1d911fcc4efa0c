//! Candidate pools: raw, per-judge valid, and the intersection pool that
//! every ranking method operates on.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStore, Judge};
use crate::error::{Error, Result};
use crate::{QueryId, StoryId};

/// Pool construction step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolVariant {
    Raw,
    ValidA,
    ValidB,
    Intersection,
}

impl PoolVariant {
    pub fn name(self) -> &'static str {
        match self {
            PoolVariant::Raw => "raw",
            PoolVariant::ValidA => "valid_a",
            PoolVariant::ValidB => "valid_b",
            PoolVariant::Intersection => "intersection",
        }
    }
}

/// One query's candidate set under one variant. Members are kept in
/// lexicographic story-id order — the canonical order all deterministic
/// tie-breaking downstream relies on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub query_id: QueryId,
    pub variant: PoolVariant,
    pub members: Vec<StoryId>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// All four pool variants for one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSet {
    pub raw: CandidatePool,
    pub valid_a: CandidatePool,
    pub valid_b: CandidatePool,
    pub intersection: CandidatePool,
}

impl PoolSet {
    pub fn get(&self, variant: PoolVariant) -> &CandidatePool {
        match variant {
            PoolVariant::Raw => &self.raw,
            PoolVariant::ValidA => &self.valid_a,
            PoolVariant::ValidB => &self.valid_b,
            PoolVariant::Intersection => &self.intersection,
        }
    }
}

/// Build every pool variant for every query in the store.
///
/// Validity comes from parse results alone; no grade value is consulted,
/// so pool construction touches no vault capability.
pub fn build_pools(store: &CorpusStore) -> BTreeMap<QueryId, PoolSet> {
    let mut out = BTreeMap::new();
    for (query_id, members) in store.stories_by_query() {
        let filter = |pred: &dyn Fn(&str) -> bool, variant: PoolVariant| CandidatePool {
            query_id: query_id.clone(),
            variant,
            members: members.iter().filter(|id| pred(id)).cloned().collect(),
        };
        let valid_a = filter(&|id| store.label_valid(Judge::A, id), PoolVariant::ValidA);
        let valid_b = filter(&|id| store.label_valid(Judge::B, id), PoolVariant::ValidB);
        let intersection = filter(
            &|id| store.label_valid(Judge::A, id) && store.label_valid(Judge::B, id),
            PoolVariant::Intersection,
        );
        let raw = CandidatePool { query_id: query_id.clone(), variant: PoolVariant::Raw, members };
        out.insert(query_id, PoolSet { raw, valid_a, valid_b, intersection });
    }
    out
}

/// Queries whose intersection pool reaches the eligibility cutoff.
pub fn eligible_queries(pools: &BTreeMap<QueryId, PoolSet>, k: usize) -> Result<BTreeSet<QueryId>> {
    if k == 0 {
        return Err(Error::Domain(String::from("eligibility cutoff k must be >= 1")));
    }
    Ok(pools
        .iter()
        .filter(|(_, set)| set.intersection.len() >= k)
        .map(|(q, _)| q.clone())
        .collect())
}

/// Distribution summary of pool sizes over some population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolStats {
    pub variant: PoolVariant,
    pub n: usize,
    pub min: usize,
    /// Median; for an even count, the mean of the two central values.
    pub median: f64,
    pub mean: f64,
    pub max: usize,
}

/// Summarise a list of pool sizes. The caller picks the population —
/// all queries, or pooled test query x seed rows.
pub fn pool_stats(sizes: &[usize], variant: PoolVariant) -> Result<PoolStats> {
    if sizes.is_empty() {
        return Err(Error::Domain(format!(
            "pool_stats over empty population (variant {})",
            variant.name()
        )));
    }
    let mut sorted: Vec<usize> = sizes.into();
    sorted.sort_unstable();
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    let mean = sorted.iter().sum::<usize>() as f64 / n as f64;
    Ok(PoolStats { variant, n, min: sorted[0], median, mean, max: sorted[n - 1] })
}

/// Pool sizes of one variant across all queries.
pub fn sizes_over_queries(pools: &BTreeMap<QueryId, PoolSet>, variant: PoolVariant) -> Vec<usize> {
    pools.values().map(|set| set.get(variant).len()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusStore, JudgeLabel, Query};
    use alloc::string::ToString;
    use alloc::vec;

    fn store_with(valid_a: &[&str], valid_b: &[&str], all: &[&str]) -> CorpusStore {
        let q = Query::new(8, "Honesty", "Arab").unwrap();
        let stories = all
            .iter()
            .map(|id| (id.to_string(), q.clone(), format!("text {id}")))
            .collect();
        let label = |id: &&str, judge, ok: bool| {
            JudgeLabel::from_raw(
                id.to_string(),
                judge,
                if ok { r#"{"score": 3}"#.into() } else { "bad".into() },
            )
        };
        let labels_a = all.iter().map(|id| label(id, Judge::A, valid_a.contains(id))).collect();
        let labels_b = all.iter().map(|id| label(id, Judge::B, valid_b.contains(id))).collect();
        CorpusStore::build(stories, labels_a, labels_b).unwrap().0
    }

    #[test]
    fn intersection_is_set_intersection() {
        let store = store_with(&["s1", "s2", "s3"], &["s2", "s3", "s4"], &["s1", "s2", "s3", "s4"]);
        let pools = build_pools(&store);
        let set = &pools["age8|honesty|arab"];
        assert_eq!(set.raw.members, vec!["s1", "s2", "s3", "s4"]);
        assert_eq!(set.valid_a.members, vec!["s1", "s2", "s3"]);
        assert_eq!(set.valid_b.members, vec!["s2", "s3", "s4"]);
        assert_eq!(set.intersection.members, vec!["s2", "s3"]);
    }

    #[test]
    fn monotone_nesting() {
        let store = store_with(&["s1", "s3"], &["s3"], &["s1", "s2", "s3"]);
        let pools = build_pools(&store);
        for set in pools.values() {
            let raw: BTreeSet<_> = set.raw.members.iter().collect();
            let a: BTreeSet<_> = set.valid_a.members.iter().collect();
            let b: BTreeSet<_> = set.valid_b.members.iter().collect();
            let i: BTreeSet<_> = set.intersection.members.iter().collect();
            assert!(a.is_subset(&raw) && b.is_subset(&raw));
            assert!(i.is_subset(&a) && i.is_subset(&b));
            let both: BTreeSet<_> = a.intersection(&b).cloned().collect();
            assert_eq!(i, both);
        }
    }

    #[test]
    fn all_b_null_means_empty_intersection() {
        let store = store_with(&["s1", "s2"], &[], &["s1", "s2"]);
        let pools = build_pools(&store);
        assert!(pools["age8|honesty|arab"].intersection.is_empty());
    }

    #[test]
    fn eligibility_threshold() {
        let store = store_with(&["s1", "s2", "s3"], &["s1", "s2", "s3"], &["s1", "s2", "s3"]);
        let pools = build_pools(&store);
        assert_eq!(eligible_queries(&pools, 3).unwrap().len(), 1);
        assert_eq!(eligible_queries(&pools, 4).unwrap().len(), 0);
        assert!(matches!(eligible_queries(&pools, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn stats_median_conventions() {
        let s = pool_stats(&[10, 20, 30], PoolVariant::Intersection).unwrap();
        assert_eq!((s.min, s.median, s.mean, s.max), (10, 20.0, 20.0, 30));
        let s = pool_stats(&[10, 20, 30, 40], PoolVariant::Raw).unwrap();
        assert_eq!(s.median, 25.0);
        assert!(pool_stats(&[], PoolVariant::Raw).is_err());
    }
}
