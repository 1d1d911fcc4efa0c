//! Seeded query-level partitioning into train/dev/test.
//!
//! The permutation is driven by [`crate::rng::SplitMix64`] over the
//! sorted eligible-query list, so a manifest is a pure function of
//! (seed, eligible set, sizes) and can be re-derived bit-identically by
//! any implementation of the same generator.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pools::PoolSet;
use crate::rng::SplitMix64;
use crate::{QueryId, StoryId};

/// Split partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Dev,
    Test,
}

impl Part {
    pub fn name(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Dev => "dev",
            Part::Test => "test",
        }
    }
}

/// One seed's total, disjoint assignment of eligible queries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub assignment: BTreeMap<QueryId, Part>,
}

impl SplitManifest {
    pub fn queries_in(&self, part: Part) -> Vec<QueryId> {
        self.assignment
            .iter()
            .filter(|(_, p)| **p == part)
            .map(|(q, _)| q.clone())
            .collect()
    }

    pub fn part_of(&self, query_id: &str) -> Option<Part> {
        self.assignment.get(query_id).copied()
    }
}

/// Generate one manifest per seed.
///
/// Each manifest shuffles `sorted(eligible)` with that seed's stream and
/// cuts at the size boundaries, train first, then dev, then test.
pub fn make_splits(
    eligible: &BTreeSet<QueryId>,
    seeds: &[u64],
    sizes: (usize, usize, usize),
) -> Result<Vec<SplitManifest>> {
    let (n_train, n_dev, n_test) = sizes;
    if n_train + n_dev + n_test != eligible.len() {
        return Err(Error::Domain(format!(
            "split sizes {}+{}+{} do not sum to {} eligible queries",
            n_train,
            n_dev,
            n_test,
            eligible.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for &seed in seeds {
        if !seen.insert(seed) {
            return Err(Error::Domain(format!("duplicate split seed {seed}")));
        }
    }

    let sorted: Vec<QueryId> = eligible.iter().cloned().collect();
    let mut manifests = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut order = sorted.clone();
        SplitMix64::derived(seed, "query-split").shuffle(&mut order);
        let mut assignment = BTreeMap::new();
        for (i, query_id) in order.into_iter().enumerate() {
            let part = if i < n_train {
                Part::Train
            } else if i < n_train + n_dev {
                Part::Dev
            } else {
                Part::Test
            };
            assignment.insert(query_id, part);
        }
        manifests.push(SplitManifest { seed, assignment });
    }
    Ok(manifests)
}

/// Check that no story's candidates span partitions.
///
/// Takes manifest *rows* rather than the typed manifest so corrupted
/// files (a query listed under two partitions) are detectable. Returns
/// the violating query ids, empty when clean.
pub fn guard_no_query_leak(
    rows: &[(QueryId, Part)],
    pools: &BTreeMap<QueryId, PoolSet>,
) -> Vec<QueryId> {
    let mut parts_by_query: BTreeMap<&str, BTreeSet<Part>> = BTreeMap::new();
    for (query_id, part) in rows {
        parts_by_query.entry(query_id).or_default().insert(*part);
    }
    let mut violations = BTreeSet::new();
    for (query_id, parts) in &parts_by_query {
        if parts.len() > 1 {
            violations.insert(String::from(*query_id));
        }
    }
    // A story reachable from two differently-assigned queries would also
    // leak; pools key stories by query so this reduces to id overlap.
    let mut story_part: BTreeMap<&StoryId, (&str, Part)> = BTreeMap::new();
    for (query_id, parts) in &parts_by_query {
        let Some(set) = pools.get(*query_id) else { continue };
        let Some(&part) = parts.iter().next() else { continue };
        for story in &set.raw.members {
            if let Some(&(other_query, other_part)) = story_part.get(story) {
                if other_part != part {
                    violations.insert(String::from(*query_id));
                    violations.insert(String::from(other_query));
                }
            } else {
                story_part.insert(story, (query_id, part));
            }
        }
    }
    violations.into_iter().collect()
}
