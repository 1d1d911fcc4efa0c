//! Unsupervised within-query rankers: Random, BM25, DPH, Dirichlet LM,
//! and the B-Score oracle.
//!
//! All lexical models score the pseudo-query derived from the serialized
//! constraint string against the candidate pool. Collection statistics
//! default to the pool itself (ranking is strictly within-query) but an
//! index can be built against corpus-wide statistics for sensitivity
//! checks. Ties break by ascending story id everywhere.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use libm::{log, log2};
use serde::{Deserialize, Serialize};

use crate::corpus::Query;
use crate::error::{Error, Result};
use crate::pools::CandidatePool;
use crate::rng::SplitMix64;
use crate::vault::SupervisionView;
use crate::{QueryId, StoryId};

/// The canonical textual serialisation T(q) of a constraint triple.
/// This exact string is what lexical rankers tokenize and what external
/// encoders must embed under the query's id.
pub fn serialize_query(q: &Query) -> String {
    format!("Age: {}, Moral: {}, Culture: {}", q.age, q.moral, q.culture)
}

/// Lowercase, split on any non-alphanumeric, drop empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Token form of T(q) used by the lexical rankers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoQuery {
    pub query_id: QueryId,
    pub tokens: Vec<String>,
}

impl PseudoQuery {
    pub fn from_query(q: &Query) -> PseudoQuery {
        PseudoQuery { query_id: q.query_id.clone(), tokens: tokenize(&serialize_query(q)) }
    }
}

/// Per-story term statistics.
#[derive(Debug, Clone, Default)]
pub struct DocStats {
    pub tf: BTreeMap<String, u64>,
    pub len: u64,
}

impl DocStats {
    pub fn from_text(text: &str) -> DocStats {
        let mut tf = BTreeMap::new();
        let mut len = 0;
        for token in tokenize(text) {
            *tf.entry(token).or_insert(0) += 1;
            len += 1;
        }
        DocStats { tf, len }
    }

    pub fn tf(&self, term: &str) -> u64 {
        self.tf.get(term).copied().unwrap_or(0)
    }
}

/// Collection statistics (document frequencies, collection term counts,
/// document count, total length).
#[derive(Debug, Clone, Default)]
pub struct CollectionStats {
    pub n_docs: u64,
    pub total_len: u64,
    pub df: BTreeMap<String, u64>,
    pub cf: BTreeMap<String, u64>,
}

impl CollectionStats {
    pub fn add_doc(&mut self, doc: &DocStats) {
        self.n_docs += 1;
        self.total_len += doc.len;
        for (term, count) in &doc.tf {
            *self.df.entry(term.clone()).or_insert(0) += 1;
            *self.cf.entry(term.clone()).or_insert(0) += count;
        }
    }

    pub fn avgdl(&self) -> f64 {
        if self.n_docs == 0 {
            0.0
        } else {
            self.total_len as f64 / self.n_docs as f64
        }
    }

    pub fn df(&self, term: &str) -> u64 {
        self.df.get(term).copied().unwrap_or(0)
    }

    pub fn cf(&self, term: &str) -> u64 {
        self.cf.get(term).copied().unwrap_or(0)
    }

    /// Collection unigram probability p(t|C).
    pub fn p_collection(&self, term: &str) -> f64 {
        if self.total_len == 0 {
            0.0
        } else {
            self.cf(term) as f64 / self.total_len as f64
        }
    }
}

/// Term statistics for one candidate pool, plus the collection stats the
/// formulas normalise against (pool-local by default).
#[derive(Debug, Clone)]
pub struct PoolIndex {
    pub docs: BTreeMap<StoryId, DocStats>,
    pub coll: CollectionStats,
}

impl PoolIndex {
    /// Index pool documents with pool-local collection statistics.
    pub fn build<'a>(docs: impl IntoIterator<Item = (StoryId, &'a str)>) -> PoolIndex {
        let docs: BTreeMap<StoryId, DocStats> = docs
            .into_iter()
            .map(|(id, text)| (id, DocStats::from_text(text)))
            .collect();
        let mut coll = CollectionStats::default();
        for doc in docs.values() {
            coll.add_doc(doc);
        }
        PoolIndex { docs, coll }
    }

    /// Index pool documents against externally supplied (e.g.
    /// corpus-wide) collection statistics.
    pub fn with_collection<'a>(
        docs: impl IntoIterator<Item = (StoryId, &'a str)>,
        coll: CollectionStats,
    ) -> PoolIndex {
        let docs = docs
            .into_iter()
            .map(|(id, text)| (id, DocStats::from_text(text)))
            .collect();
        PoolIndex { docs, coll }
    }
}

/// A story with its ranking score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub story_id: StoryId,
    pub score: f64,
}

/// Canonical ordering: descending score, ties by ascending story id.
pub fn sort_scored(mut scored: Vec<Scored>) -> Vec<Scored> {
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.story_id.cmp(&b.story_id)));
    scored
}

/// Seeded uniform random permutation; score n - position so higher means
/// earlier. Deterministic per (seed, query id).
pub fn rank_random(pool: &CandidatePool, seed: u64) -> Result<Vec<Scored>> {
    if pool.is_empty() {
        return Err(Error::Domain(format!("random ranker over empty pool {}", pool.query_id)));
    }
    let mut order = pool.members.clone();
    let mut rng = SplitMix64::derived(seed, &format!("random|{}", pool.query_id));
    rng.shuffle(&mut order);
    let n = order.len();
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(i, story_id)| Scored { story_id, score: (n - i) as f64 })
        .collect())
}

/// BM25 (Robertson-Sparck Jones form, non-negative idf):
///
/// score(s) = sum_t idf(t) * tf (k1+1) / (tf + k1 (1 - b + b dl/avgdl)),
/// idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1).
pub fn rank_bm25(pq: &PseudoQuery, index: &PoolIndex, k1: f64, b: f64) -> Result<Vec<Scored>> {
    if k1 <= 0.0 {
        return Err(Error::Domain(format!("bm25 k1 must be > 0, got {k1}")));
    }
    if !(0.0..=1.0).contains(&b) {
        return Err(Error::Domain(format!("bm25 b must be in [0, 1], got {b}")));
    }
    let n = index.coll.n_docs as f64;
    let avgdl = index.coll.avgdl();
    let scored = index
        .docs
        .iter()
        .map(|(id, doc)| {
            let mut score = 0.0;
            for term in &pq.tokens {
                let tf = doc.tf(term) as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = index.coll.df(term) as f64;
                let idf = log((n - df + 0.5) / (df + 0.5) + 1.0);
                let norm = k1 * (1.0 - b + b * doc.len as f64 / avgdl);
                score += idf * tf * (k1 + 1.0) / (tf + norm);
            }
            Scored { story_id: id.clone(), score }
        })
        .collect();
    Ok(sort_scored(scored))
}

/// Parameter-free DPH (divergence from randomness), summed over query
/// terms with tf > 0:
///
/// norm * [ tf log2((tf avgdl/dl)(N/cf)) + 0.5 log2(2 pi tf (1 - tf/dl)) ]
/// with norm = (1 - tf/dl)^2 / (tf + 1).
///
/// At tf = dl the (1 - tf/dl) log argument is floored at 1e-9; norm is
/// already 0 there, so the term contributes 0 instead of NaN.
pub fn rank_dph(pq: &PseudoQuery, index: &PoolIndex) -> Vec<Scored> {
    let n = index.coll.n_docs as f64;
    let avgdl = index.coll.avgdl();
    let scored = index
        .docs
        .iter()
        .map(|(id, doc)| {
            let dl = doc.len as f64;
            let mut score = 0.0;
            for term in &pq.tokens {
                let tf = doc.tf(term) as f64;
                if tf == 0.0 {
                    continue;
                }
                let cf = index.coll.cf(term) as f64;
                let rel_freq = tf / dl;
                let norm = (1.0 - rel_freq) * (1.0 - rel_freq) / (tf + 1.0);
                let floored = (1.0 - rel_freq).max(1e-9);
                score += norm
                    * (tf * log2((tf * avgdl / dl) * (n / cf))
                        + 0.5 * log2(2.0 * core::f64::consts::PI * tf * floored));
            }
            Scored { story_id: id.clone(), score }
        })
        .collect();
    sort_scored(scored)
}

/// Dirichlet-smoothed query likelihood:
///
/// score(s) = sum_t log((tf + mu p(t|C)) / (dl + mu)); query terms absent
/// from the whole collection (p(t|C) = 0) are skipped.
pub fn rank_dirichlet(pq: &PseudoQuery, index: &PoolIndex, mu: f64) -> Result<Vec<Scored>> {
    if mu <= 0.0 {
        return Err(Error::Domain(format!("dirichlet mu must be > 0, got {mu}")));
    }
    let scored = index
        .docs
        .iter()
        .map(|(id, doc)| {
            let dl = doc.len as f64;
            let mut score = 0.0;
            for term in &pq.tokens {
                let p_coll = index.coll.p_collection(term);
                if p_coll == 0.0 {
                    continue;
                }
                score += log((doc.tf(term) as f64 + mu * p_coll) / (dl + mu));
            }
            Scored { story_id: id.clone(), score }
        })
        .collect();
    Ok(sort_scored(scored))
}

/// The B-Score oracle: score each candidate by its supervision grade.
/// Legal only on intersection pools, where every member has a valid y_B.
pub fn rank_bscore(pool: &CandidatePool, supervision: &SupervisionView<'_>) -> Result<Vec<Scored>> {
    let scored = pool
        .members
        .iter()
        .map(|id| {
            let grade = supervision.grade_of(id).ok_or_else(|| {
                Error::Data(format!(
                    "intersection breach: pool {} member {id} has no supervision grade",
                    pool.query_id
                ))
            })?;
            Ok(Scored { story_id: id.clone(), score: grade.get() as f64 })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sort_scored(scored))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{enumerate_queries, Grade};
    use crate::pools::PoolVariant;
    use crate::vault::{LabelVault, Phase};
    use alloc::collections::BTreeSet;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn serialization_matches_template() {
        let q = Query::new(8, "Honesty", "Arab").unwrap();
        assert_eq!(serialize_query(&q), "Age: 8, Moral: Honesty, Culture: Arab");
        let q = Query::new(4, "Patience", "South Asian").unwrap();
        assert_eq!(serialize_query(&q), "Age: 4, Moral: Patience, Culture: South Asian");
    }

    #[test]
    fn serialization_injective_over_query_space() {
        let texts: BTreeSet<String> = enumerate_queries().iter().map(serialize_query).collect();
        assert_eq!(texts.len(), 343);
    }

    #[test]
    fn tokenize_is_lowercase_alnum() {
        assert_eq!(
            tokenize("Age: 8, Moral: Honesty!"),
            vec!["age", "8", "moral", "honesty"]
        );
        assert_eq!(tokenize("  --  "), Vec::<String>::new());
    }

    fn pool(ids: &[&str]) -> CandidatePool {
        CandidatePool {
            query_id: "age8|honesty|arab".to_string(),
            variant: PoolVariant::Intersection,
            members: ids.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn random_single_and_deterministic() {
        let p = pool(&["only"]);
        let r = rank_random(&p, 0).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].story_id, "only");

        let p3 = pool(&["a", "b", "c"]);
        let r1 = rank_random(&p3, 17).unwrap();
        let r2 = rank_random(&p3, 17).unwrap();
        assert_eq!(r1, r2);
        assert!(rank_random(&pool(&[]), 0).is_err());
    }

    #[test]
    fn random_orders_are_uniform() {
        // 10,000 seeds on a 3-item pool: each of the 6 orders within
        // 1/6 +- 0.02.
        let p = pool(&["a", "b", "c"]);
        let mut counts: BTreeMap<Vec<StoryId>, usize> = BTreeMap::new();
        for seed in 0..10_000u64 {
            let order: Vec<StoryId> =
                rank_random(&p, seed).unwrap().into_iter().map(|s| s.story_id).collect();
            *counts.entry(order).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 6);
        for (_, c) in counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 1.0 / 6.0).abs() < 0.02, "freq {freq}");
        }
    }

    // Shared toy pool with hand-countable statistics. The expected
    // scores below were computed independently, spreadsheet-style, from
    // the printed formulas.
    fn toy_index() -> PoolIndex {
        PoolIndex::build([
            ("s1".to_string(), "honesty in the arab village honesty matters"),
            ("s2".to_string(), "a tale of patience and kindness for children"),
            ("s3".to_string(), "arab traditions of honesty and honesty and honesty"),
        ])
    }

    fn toy_query() -> PseudoQuery {
        PseudoQuery::from_query(&Query::new(8, "Honesty", "Arab").unwrap())
    }

    fn score_of(ranked: &[Scored], id: &str) -> f64 {
        ranked.iter().find(|s| s.story_id == id).unwrap().score
    }

    #[test]
    fn bm25_matches_hand_computation() {
        let ranked = rank_bm25(&toy_query(), &toy_index(), 1.2, 0.75).unwrap();
        assert!((score_of(&ranked, "s1") - 1.149796197482738).abs() < 1e-9);
        assert!((score_of(&ranked, "s2") - 0.0).abs() < 1e-12); // no query term present
        assert!((score_of(&ranked, "s3") - 1.193549470199298).abs() < 1e-9);
        assert_eq!(ranked[0].story_id, "s3");
    }

    #[test]
    fn bm25_parameter_domain() {
        assert!(rank_bm25(&toy_query(), &toy_index(), 0.0, 0.5).is_err());
        assert!(rank_bm25(&toy_query(), &toy_index(), 1.2, 1.5).is_err());
    }

    #[test]
    fn dph_matches_hand_computation() {
        let ranked = rank_dph(&toy_query(), &toy_index());
        assert!((score_of(&ranked, "s1") - 1.112590429864047).abs() < 1e-9);
        assert!((score_of(&ranked, "s2") - 0.0).abs() < 1e-12);
        assert!((score_of(&ranked, "s3") - 1.075263025093260).abs() < 1e-9);
    }

    #[test]
    fn dph_degenerate_single_term_story_is_finite() {
        // story that is one repeated query term: tf = dl
        let index = PoolIndex::build([
            ("rep".to_string(), "honesty honesty honesty"),
            ("other".to_string(), "a quiet tale of patience"),
        ]);
        let ranked = rank_dph(&toy_query(), &index);
        for s in &ranked {
            assert!(s.score.is_finite());
        }
        // norm = 0 at tf = dl, so the degenerate term contributes 0
        assert_eq!(score_of(&ranked, "rep"), 0.0);
    }

    #[test]
    fn dirichlet_matches_hand_computation() {
        let ranked = rank_dirichlet(&toy_query(), &toy_index(), 2000.0).unwrap();
        assert!((score_of(&ranked, "s1") - -3.965068133191197).abs() < 1e-9);
        assert!((score_of(&ranked, "s2") - -3.976387381403328).abs() < 1e-9);
        assert!((score_of(&ranked, "s3") - -3.963777545616136).abs() < 1e-9);
        assert_eq!(ranked[0].story_id, "s3");
    }

    #[test]
    fn dirichlet_smoothing_dominates_at_large_mu() {
        let spread = |mu: f64| {
            let ranked = rank_dirichlet(&toy_query(), &toy_index(), mu).unwrap();
            let scores: Vec<f64> = ranked.iter().map(|s| s.score).collect();
            scores.iter().cloned().fold(f64::MIN, f64::max)
                - scores.iter().cloned().fold(f64::MAX, f64::min)
        };
        assert!(spread(2e6) < spread(2000.0) / 100.0);
        assert!(rank_dirichlet(&toy_query(), &toy_index(), 0.0).is_err());
    }

    #[test]
    fn dirichlet_single_term_query() {
        let pq = PseudoQuery { query_id: "q".to_string(), tokens: vec!["village".to_string()] };
        let ranked = rank_dirichlet(&pq, &toy_index(), 2000.0).unwrap();
        assert_eq!(ranked[0].story_id, "s1"); // only s1 contains "village"
    }

    #[test]
    fn identical_stories_tie_and_sort_by_id() {
        let text = "honesty in an arab household";
        let index = PoolIndex::build([
            ("s2".to_string(), text),
            ("s1".to_string(), text),
            ("s3".to_string(), text),
        ]);
        for ranked in [
            rank_bm25(&toy_query(), &index, 1.2, 0.75).unwrap(),
            rank_dph(&toy_query(), &index),
            rank_dirichlet(&toy_query(), &index, 2000.0).unwrap(),
        ] {
            assert!((ranked[0].score - ranked[2].score).abs() < 1e-12);
            let ids: Vec<_> = ranked.iter().map(|s| s.story_id.as_str()).collect();
            assert_eq!(ids, vec!["s1", "s2", "s3"]);
        }
    }

    #[test]
    fn ranking_invariant_to_input_order() {
        let fwd = toy_index();
        let rev = PoolIndex::build([
            ("s3".to_string(), "arab traditions of honesty and honesty and honesty"),
            ("s1".to_string(), "honesty in the arab village honesty matters"),
            ("s2".to_string(), "a tale of patience and kindness for children"),
        ]);
        assert_eq!(
            rank_bm25(&toy_query(), &fwd, 1.2, 0.75).unwrap(),
            rank_bm25(&toy_query(), &rev, 1.2, 0.75).unwrap()
        );
        assert_eq!(rank_dph(&toy_query(), &fwd), rank_dph(&toy_query(), &rev));
    }

    #[test]
    fn bscore_sorts_by_grade_then_id() {
        let grades_b: BTreeMap<StoryId, Grade> = [
            ("s1".to_string(), Grade::new(5).unwrap()),
            ("s2".to_string(), Grade::new(3).unwrap()),
            ("s3".to_string(), Grade::new(5).unwrap()),
        ]
        .into_iter()
        .collect();
        let vault = LabelVault::new(BTreeMap::new(), grades_b);
        let view = vault.open_supervision(Phase::Rank).unwrap();
        let ranked = rank_bscore(&pool(&["s1", "s2", "s3"]), &view).unwrap();
        let ids: Vec<_> = ranked.iter().map(|s| s.story_id.as_str()).collect();
        assert_eq!(ids, vec!["s1", "s3", "s2"]);
    }

    #[test]
    fn bscore_missing_grade_is_breach() {
        let vault = LabelVault::new(BTreeMap::new(), BTreeMap::new());
        let view = vault.open_supervision(Phase::Rank).unwrap();
        assert!(matches!(rank_bscore(&pool(&["s1"]), &view), Err(Error::Data(_))));
    }
}
