//! Stories, structured queries, and judge labels.
//!
//! A query is the constraint triple (age, moral, culture); the full query
//! space is the 7x7x7 Cartesian product. Judge outputs are accepted only
//! under the strict-JSON rule: a single JSON object whose `"score"` key
//! holds a JSON integer in 1..=5. Anything else is a legal *absent* label,
//! never an error — missing labels are handled downstream by intersection
//! filtering, not here.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{QueryId, StoryId};

/// Valid age constraints.
pub const AGES: core::ops::RangeInclusive<u8> = 4..=10;

/// Canonical moral themes.
pub const MORALS: [&str; 7] = [
    "Bravery",
    "Cooperation",
    "Empathy",
    "Honesty",
    "Kindness",
    "Patience",
    "Respect",
];

/// Canonical cultural contexts.
pub const CULTURES: [&str; 7] = [
    "African",
    "Arab",
    "East Asian",
    "European",
    "Global",
    "Latin American",
    "South Asian",
];

/// Category-name normalization: lowercase, runs of non-alphanumerics
/// become a single underscore, leading/trailing underscores dropped.
/// This is the form embedded in query ids.
pub fn normalize_category(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut pending_sep = false;
    for ch in name.chars() {
        if ch.is_ascii_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            for lc in ch.to_lowercase() {
                out.push(lc);
            }
        } else {
            pending_sep = true;
        }
    }
    out
}

/// Common abbreviations accepted on input and folded to canonical names.
const CULTURE_ALIASES: [(&str, &str); 5] = [
    ("e_asian", "East Asian"),
    ("lat_am", "Latin American"),
    ("lat_american", "Latin American"),
    ("s_asian", "South Asian"),
    ("global_neut", "Global"),
];

fn canonical_moral(name: &str) -> Option<&'static str> {
    let norm = normalize_category(name);
    MORALS.iter().find(|m| normalize_category(m) == norm).copied()
}

fn canonical_culture(name: &str) -> Option<&'static str> {
    let norm = normalize_category(name);
    if let Some(c) = CULTURES.iter().find(|c| normalize_category(c) == norm) {
        return Some(c);
    }
    CULTURE_ALIASES
        .iter()
        .find(|(alias, _)| *alias == norm)
        .map(|(_, full)| CULTURES.iter().find(|c| *c == full).copied().unwrap())
}

/// A structured query: the constraint triple plus its derived id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Query {
    pub query_id: QueryId,
    pub age: u8,
    /// Canonical moral name, e.g. "Honesty".
    pub moral: String,
    /// Canonical culture name, e.g. "South Asian".
    pub culture: String,
}

impl Query {
    /// Validate the triple and derive the canonical id.
    pub fn new(age: u8, moral: &str, culture: &str) -> Result<Query> {
        let query_id = derive_query_id(age, moral, culture)?;
        Ok(Query {
            query_id,
            age,
            moral: canonical_moral(moral).unwrap().to_owned(),
            culture: canonical_culture(culture).unwrap().to_owned(),
        })
    }
}

/// Canonical query id: `age<AGE>|<moral>|<culture>` with normalized
/// category names. Injective over the 343-triple space.
pub fn derive_query_id(age: u8, moral: &str, culture: &str) -> Result<QueryId> {
    if !AGES.contains(&age) {
        return Err(Error::Domain(format!(
            "age {age} outside {{{}..{}}}",
            AGES.start(),
            AGES.end()
        )));
    }
    let moral = canonical_moral(moral)
        .ok_or_else(|| Error::Domain(format!("moral {moral:?} not a known moral theme")))?;
    let culture = canonical_culture(culture)
        .ok_or_else(|| Error::Domain(format!("culture {culture:?} not a known cultural context")))?;
    Ok(format!(
        "age{age}|{}|{}",
        normalize_category(moral),
        normalize_category(culture)
    ))
}

/// Enumerate the full 7x7x7 query space in (age, moral, culture) order.
pub fn enumerate_queries() -> Vec<Query> {
    let mut out = Vec::with_capacity(343);
    for age in AGES {
        for moral in MORALS {
            for culture in CULTURES {
                out.push(Query::new(age, moral, culture).unwrap());
            }
        }
    }
    out
}

/// A generated candidate story.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Story {
    pub story_id: StoryId,
    pub query_id: QueryId,
    pub text: String,
}

/// Which judge produced a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Judge {
    A,
    B,
}

impl Judge {
    pub fn name(self) -> &'static str {
        match self {
            Judge::A => "A",
            Judge::B => "B",
        }
    }
}

/// An ordinal relevance grade in 1..=5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Grade(u8);

impl Grade {
    pub fn new(value: i64) -> Option<Grade> {
        (1..=5).contains(&value).then(|| Grade(value as u8))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Graded gain 2^r - 1 used inside DCG.
    pub fn gain(self) -> f64 {
        ((1u32 << self.0) - 1) as f64
    }

    /// Cascade stop probability (2^r - 1) / 2^r_max with r_max = 5.
    pub fn stop_probability(self) -> f64 {
        self.gain() / 32.0
    }
}

/// One judge annotation for one story, valid or not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeLabel {
    pub story_id: StoryId,
    pub judge: Judge,
    pub raw_output: String,
    pub grade: Option<Grade>,
}

impl JudgeLabel {
    /// Build a label from a raw judge output string.
    pub fn from_raw(story_id: StoryId, judge: Judge, raw_output: String) -> JudgeLabel {
        let grade = parse_judge_output(&raw_output);
        JudgeLabel { story_id, judge, raw_output, grade }
    }
}

/// Strict-JSON judge output validation.
///
/// Accepts exactly one well-formed JSON object (surrounding whitespace
/// tolerated, extra keys tolerated) whose `"score"` value is a JSON
/// integer in 1..=5. Non-integer numbers (`3.0`, `1e1`), strings, arrays,
/// missing keys, out-of-range values and trailing content all yield
/// `None` — an absent label, not an error.
pub fn parse_judge_output(raw: &str) -> Option<Grade> {
    let value: serde_json::Value = serde_json::from_str(raw).ok()?;
    let object = value.as_object()?;
    let score = object.get("score")?;
    // as_i64 is None for any float-syntax number, which is what rejects
    // tokens containing '.' or an exponent.
    Grade::new(score.as_i64()?)
}

/// Corpus-level ingest statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_stories: usize,
    pub n_queries: usize,
    pub null_count_a: usize,
    pub null_rate_a: f64,
    pub null_count_b: usize,
    pub null_rate_b: f64,
}

/// Immutable, indexed view of an ingested corpus.
///
/// Construction validates referential integrity; afterwards the store is
/// read-only and safe to share across parallel readers.
#[derive(Debug, Clone)]
pub struct CorpusStore {
    stories: BTreeMap<StoryId, Story>,
    queries: BTreeMap<QueryId, Query>,
    labels_a: BTreeMap<StoryId, JudgeLabel>,
    labels_b: BTreeMap<StoryId, JudgeLabel>,
}

impl CorpusStore {
    /// Index parsed records and compute [`CorpusStats`].
    ///
    /// Hard errors: duplicate story ids, duplicate labels, labels naming
    /// unknown stories, stories with empty text or an unknown query.
    /// A story with *no* label line for some judge counts as null for
    /// that judge, same as an unparseable output.
    pub fn build(
        stories: Vec<(StoryId, Query, String)>,
        labels_a: Vec<JudgeLabel>,
        labels_b: Vec<JudgeLabel>,
    ) -> Result<(CorpusStore, CorpusStats)> {
        let mut story_map = BTreeMap::new();
        let mut queries = BTreeMap::new();
        for (story_id, query, text) in stories {
            if text.is_empty() {
                return Err(Error::Data(format!("story {story_id}: empty text")));
            }
            queries.entry(query.query_id.clone()).or_insert_with(|| query.clone());
            let dup = story_map
                .insert(story_id.clone(), Story { story_id: story_id.clone(), query_id: query.query_id, text })
                .is_some();
            if dup {
                return Err(Error::Data(format!("duplicate story_id {story_id}")));
            }
        }

        let index_labels = |labels: Vec<JudgeLabel>, judge: Judge| -> Result<BTreeMap<StoryId, JudgeLabel>> {
            let mut map = BTreeMap::new();
            for label in labels {
                if label.judge != judge {
                    return Err(Error::Data(format!(
                        "label for {} tagged judge {} in judge {} file",
                        label.story_id,
                        label.judge.name(),
                        judge.name()
                    )));
                }
                if !story_map.contains_key(&label.story_id) {
                    return Err(Error::Data(format!(
                        "judge {} label references unknown story_id {}",
                        judge.name(),
                        label.story_id
                    )));
                }
                let id = label.story_id.clone();
                if map.insert(id.clone(), label).is_some() {
                    return Err(Error::Data(format!(
                        "duplicate judge {} label for story_id {id}",
                        judge.name()
                    )));
                }
            }
            Ok(map)
        };
        let labels_a = index_labels(labels_a, Judge::A)?;
        let labels_b = index_labels(labels_b, Judge::B)?;

        let null_count = |labels: &BTreeMap<StoryId, JudgeLabel>| {
            story_map
                .keys()
                .filter(|id| labels.get(*id).and_then(|l| l.grade).is_none())
                .count()
        };
        let n_stories = story_map.len();
        let null_count_a = null_count(&labels_a);
        let null_count_b = null_count(&labels_b);
        let rate = |c: usize| if n_stories == 0 { 0.0 } else { c as f64 / n_stories as f64 };
        let stats = CorpusStats {
            n_stories,
            n_queries: queries.len(),
            null_count_a,
            null_rate_a: rate(null_count_a),
            null_count_b,
            null_rate_b: rate(null_count_b),
        };
        Ok((CorpusStore { stories: story_map, queries, labels_a, labels_b }, stats))
    }

    pub fn stories(&self) -> &BTreeMap<StoryId, Story> {
        &self.stories
    }

    pub fn queries(&self) -> &BTreeMap<QueryId, Query> {
        &self.queries
    }

    pub fn story(&self, id: &str) -> Option<&Story> {
        self.stories.get(id)
    }

    pub fn query(&self, id: &str) -> Option<&Query> {
        self.queries.get(id)
    }

    pub fn labels(&self, judge: Judge) -> &BTreeMap<StoryId, JudgeLabel> {
        match judge {
            Judge::A => &self.labels_a,
            Judge::B => &self.labels_b,
        }
    }

    /// Is the story's label from `judge` valid (present and in range)?
    pub fn label_valid(&self, judge: Judge, story_id: &str) -> bool {
        self.labels(judge).get(story_id).and_then(|l| l.grade).is_some()
    }

    /// Valid grades per judge, for vault construction.
    pub fn valid_grades(&self, judge: Judge) -> BTreeMap<StoryId, Grade> {
        self.labels(judge)
            .iter()
            .filter_map(|(id, l)| l.grade.map(|g| (id.clone(), g)))
            .collect()
    }

    /// Story ids grouped by query, in lexicographic order.
    pub fn stories_by_query(&self) -> BTreeMap<QueryId, Vec<StoryId>> {
        let mut map: BTreeMap<QueryId, Vec<StoryId>> = BTreeMap::new();
        for story in self.stories.values() {
            map.entry(story.query_id.clone()).or_default().push(story.story_id.clone());
        }
        // BTreeMap iteration already yields story ids in lexicographic
        // order, so each member list is sorted by construction.
        map
    }

    /// Distinct query ids present in the corpus.
    pub fn query_ids(&self) -> BTreeSet<QueryId> {
        self.queries.keys().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn query_id_canonical_form() {
        assert_eq!(derive_query_id(8, "Honesty", "Arab").unwrap(), "age8|honesty|arab");
        assert_eq!(
            derive_query_id(4, "Patience", "S. Asian").unwrap(),
            "age4|patience|south_asian"
        );
        assert_eq!(
            derive_query_id(4, "Patience", "South Asian").unwrap(),
            "age4|patience|south_asian"
        );
    }

    #[test]
    fn query_id_rejects_out_of_domain() {
        let err = derive_query_id(11, "Honesty", "Arab").unwrap_err();
        assert!(matches!(err, Error::Domain(ref m) if m.contains("age")));
        let err = derive_query_id(8, "Velocity", "Arab").unwrap_err();
        assert!(matches!(err, Error::Domain(ref m) if m.contains("moral")));
        let err = derive_query_id(8, "Honesty", "Martian").unwrap_err();
        assert!(matches!(err, Error::Domain(ref m) if m.contains("culture")));
    }

    #[test]
    fn query_space_is_343_and_ids_injective() {
        let all = enumerate_queries();
        assert_eq!(all.len(), 343);
        let ids: BTreeSet<_> = all.iter().map(|q| q.query_id.clone()).collect();
        assert_eq!(ids.len(), 343);
    }

    #[test]
    fn equal_triples_equal_ids() {
        let a = Query::new(6, "Kindness", "African").unwrap();
        let b = Query::new(6, "kindness", "african").unwrap();
        assert_eq!(a.query_id, b.query_id);
    }

    #[test]
    fn parse_accepts_strict_json_integer() {
        assert_eq!(parse_judge_output(r#"{"score": 4}"#), Grade::new(4));
        assert_eq!(parse_judge_output("  {\"score\":1}\n"), Grade::new(1));
        // extra keys tolerated
        assert_eq!(
            parse_judge_output(r#"{"score": 5, "confidence": "high"}"#),
            Grade::new(5)
        );
    }

    #[test]
    fn parse_rejects_everything_else() {
        for raw in [
            r#"{"score": 7}"#,              // out of range
            r#"{"score": 0}"#,              // out of range
            r#"{"score": -2}"#,             // out of range
            "the score is 3",               // not JSON
            r#"{"score": 3.0}"#,            // float syntax
            r#"{"score": 1e0}"#,            // exponent syntax
            r#"{"score": "3"}"#,            // string
            r#"{"score": [3]}"#,            // array
            r#"{"rating": 3}"#,             // wrong key
            r#"{"score": 3} {"score": 4}"#, // multiple top-level values
            r#"[{"score": 3}]"#,            // not an object
            "",
        ] {
            assert_eq!(parse_judge_output(raw), None, "should reject {raw:?}");
        }
    }

    fn fixture_story(id: &str, q: &Query) -> (StoryId, Query, String) {
        (id.to_string(), q.clone(), format!("story text for {id}"))
    }

    #[test]
    fn build_counts_nulls_and_checks_refs() {
        let q = Query::new(8, "Honesty", "Arab").unwrap();
        let stories = vec![
            fixture_story("s1", &q),
            fixture_story("s2", &q),
            fixture_story("s3", &q),
        ];
        let labels_a = vec![
            JudgeLabel::from_raw("s1".into(), Judge::A, r#"{"score": 3}"#.into()),
            JudgeLabel::from_raw("s2".into(), Judge::A, r#"{"score": 5}"#.into()),
            JudgeLabel::from_raw("s3".into(), Judge::A, r#"{"score": 2}"#.into()),
        ];
        let labels_b = vec![
            JudgeLabel::from_raw("s1".into(), Judge::B, r#"{"score": 4}"#.into()),
            JudgeLabel::from_raw("s2".into(), Judge::B, "score: 4".into()),
            // s3 has no Judge-B line at all: also a null
        ];
        let (store, stats) = CorpusStore::build(stories, labels_a, labels_b).unwrap();
        assert_eq!(stats.n_stories, 3);
        assert_eq!(stats.n_queries, 1);
        assert_eq!(stats.null_count_a, 0);
        assert_eq!(stats.null_count_b, 2);
        assert!((stats.null_rate_b - 2.0 / 3.0).abs() < 1e-12);
        assert!(store.label_valid(Judge::B, "s1"));
        assert!(!store.label_valid(Judge::B, "s2"));
    }

    #[test]
    fn build_rejects_duplicates_and_dangling_labels() {
        let q = Query::new(8, "Honesty", "Arab").unwrap();
        let dup = CorpusStore::build(
            vec![fixture_story("s1", &q), fixture_story("s1", &q)],
            vec![],
            vec![],
        );
        assert!(matches!(dup, Err(Error::Data(_))));

        let dangling = CorpusStore::build(
            vec![fixture_story("s1", &q)],
            vec![JudgeLabel::from_raw("ghost".into(), Judge::A, r#"{"score":1}"#.into())],
            vec![],
        );
        assert!(matches!(dangling, Err(Error::Data(_))));
    }

    #[test]
    fn empty_corpus_has_zero_rates() {
        let (_, stats) = CorpusStore::build(vec![], vec![], vec![]).unwrap();
        assert_eq!(stats.n_stories, 0);
        assert_eq!(stats.null_rate_a, 0.0);
        assert_eq!(stats.null_rate_b, 0.0);
    }

    #[test]
    fn grade_gain_values() {
        assert_eq!(Grade::new(5).unwrap().gain(), 31.0);
        assert_eq!(Grade::new(1).unwrap().gain(), 1.0);
        assert_eq!(Grade::new(5).unwrap().stop_probability(), 31.0 / 32.0);
    }
}
