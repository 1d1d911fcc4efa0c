//! Frozen embedding tables and cosine-similarity ranking.
//!
//! Embeddings are an external input: queries are keyed by query id (the
//! vector for T(q)), stories by story id, in one shared namespace. The
//! encoders themselves live outside the harness; [`synth_embed`] exists
//! so tests never need one.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use libm::sqrt;

use crate::error::{Error, Result};
use crate::lexical::{sort_scored, Scored};
use crate::pools::CandidatePool;
use crate::rng::SplitMix64;

/// Fixed-dimension vectors indexed by story or query id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<EmbeddingTable> {
        if dim == 0 {
            return Err(Error::Domain(String::from("embedding dim must be >= 1")));
        }
        Ok(EmbeddingTable { dim, vectors: BTreeMap::new() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, id: String, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Data(format!(
                "embedding {id}: dimension {} != table dimension {}",
                vector.len(),
                self.dim
            )));
        }
        if self.vectors.insert(id.clone(), vector).is_some() {
            return Err(Error::Data(format!("duplicate embedding id {id}")));
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn require(&self, id: &str) -> Result<&[f64]> {
        self.get(id).ok_or_else(|| Error::Data(format!("no embedding for id {id}")))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.vectors.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.vectors.iter()
    }

    /// Merge another table into this one (dims must agree, ids disjoint).
    pub fn merge(&mut self, other: EmbeddingTable) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::Data(format!(
                "cannot merge embedding tables of dim {} and {}",
                self.dim, other.dim
            )));
        }
        for (id, v) in other.vectors {
            self.insert(id, v)?;
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

/// Cosine similarity; zero-norm vectors are a domain error.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!(
            "cosine of vectors with different dims ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain(String::from("cosine of zero-norm vector")));
    }
    Ok(dot(a, b) / (na * nb))
}

/// Rank a pool by cosine similarity to a query vector.
pub fn rank_cosine(q_vec: &[f64], pool: &CandidatePool, table: &EmbeddingTable) -> Result<Vec<Scored>> {
    let scored = pool
        .members
        .iter()
        .map(|id| {
            let e_s = table.require(id)?;
            Ok(Scored { story_id: id.clone(), score: cosine(q_vec, e_s)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sort_scored(scored))
}

/// Deterministic pseudo-random unit vector for an id: gaussian
/// components from the (id, seed) stream, normalized. Identical across
/// platforms; used as the uninformative test embedder.
pub fn synth_embed(id: &str, dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim >= 1, "synth_embed dim must be >= 1");
    let mut rng = SplitMix64::derived(seed, &format!("embed|{id}"));
    let mut v: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
    let n = norm(&v);
    if n == 0.0 {
        // all-zero draw is astronomically unlikely; fall back to a basis vector
        v[0] = 1.0;
        return v;
    }
    for x in &mut v {
        *x /= n;
    }
    v
}
