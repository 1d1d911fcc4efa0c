//! Teacher-student distillation: fit a linear projection head over
//! frozen embeddings so that projected cosine similarity matches the
//! teacher's sigmoid-squashed relevance logits.
//!
//! The student keeps the bi-encoder contract: queries and stories are
//! projected independently and ranked by cosine. Training reads teacher
//! logits and embeddings only — no judge labels — so it cannot leak by
//! construction.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;


use serde::{Deserialize, Serialize};

use crate::embed::{cosine, dot, norm, EmbeddingTable};
use crate::error::{Error, Result};
use crate::lexical::{sort_scored, Scored};
use crate::neural::{sigmoid, Adam, TrainTraceRow};
use crate::pools::{CandidatePool, PoolSet};
use crate::rng::SplitMix64;
use crate::splits::{Part, SplitManifest};
use crate::{QueryId, StoryId};

/// Teacher relevance logits per (query, story) pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TeacherScores {
    logits: BTreeMap<(QueryId, StoryId), f64>,
}

impl TeacherScores {
    pub fn new() -> TeacherScores {
        TeacherScores::default()
    }

    pub fn insert(&mut self, query_id: QueryId, story_id: StoryId, logit: f64) -> Result<()> {
        if !logit.is_finite() {
            return Err(Error::Data(format!(
                "non-finite teacher logit for ({query_id}, {story_id})"
            )));
        }
        if self.logits.insert((query_id.clone(), story_id.clone()), logit).is_some() {
            return Err(Error::Data(format!(
                "duplicate teacher logit for ({query_id}, {story_id})"
            )));
        }
        Ok(())
    }

    pub fn get(&self, query_id: &str, story_id: &str) -> Option<f64> {
        self.logits.get(&(query_id.into(), story_id.into())).copied()
    }

    pub fn require(&self, query_id: &str, story_id: &str) -> Result<f64> {
        self.get(query_id, story_id).ok_or_else(|| {
            Error::Data(format!("teacher does not cover pair ({query_id}, {story_id})"))
        })
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(QueryId, StoryId), &f64)> {
        self.logits.iter()
    }
}

/// Student: a p x d projection applied to both query and story
/// embeddings before cosine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentProjection {
    pub out_dim: usize,
    pub in_dim: usize,
    /// Row-major p x d matrix.
    pub p: Vec<f64>,
}

impl StudentProjection {
    pub fn identity(dim: usize) -> StudentProjection {
        let mut p = vec![0.0; dim * dim];
        for i in 0..dim {
            p[i * dim + i] = 1.0;
        }
        StudentProjection { out_dim: dim, in_dim: dim, p }
    }

    /// Truncated identity plus small seeded uniform noise. Starting near
    /// the identity keeps initial projected cosines equal to raw cosines.
    pub fn init(in_dim: usize, out_dim: usize, seed: u64) -> Result<StudentProjection> {
        if out_dim == 0 || out_dim > in_dim {
            return Err(Error::Domain(format!(
                "projection width {out_dim} must be in 1..={in_dim}"
            )));
        }
        let mut rng = SplitMix64::derived(seed, "student-init");
        let mut p = vec![0.0; out_dim * in_dim];
        for (i, val) in p.iter_mut().enumerate() {
            let (row, col) = (i / in_dim, i % in_dim);
            *val = if row == col { 1.0 } else { 0.0 } + (rng.next_f64() * 2.0 - 1.0) * 0.01;
        }
        Ok(StudentProjection { out_dim, in_dim, p })
    }

    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.in_dim {
            return Err(Error::Domain(format!(
                "projecting vector of dim {} with {}x{} matrix",
                v.len(),
                self.out_dim,
                self.in_dim
            )));
        }
        let mut out = vec![0.0; self.out_dim];
        for (row, slot) in out.iter_mut().enumerate() {
            *slot = dot(&self.p[row * self.in_dim..(row + 1) * self.in_dim], v);
        }
        Ok(out)
    }

    /// Projected-space similarity cos(P e_q, P e_s).
    pub fn similarity(&self, e_q: &[f64], e_s: &[f64]) -> Result<f64> {
        cosine(&self.project(e_q)?, &self.project(e_s)?)
    }
}

/// Mean over the batch of (sigma(teacher logit) - cos(P e_q, P e_s))^2.
pub fn loss_distill(
    student: &StudentProjection,
    teacher: &TeacherScores,
    table: &EmbeddingTable,
    batch: &[(QueryId, StoryId)],
) -> Result<f64> {
    Ok(grad_distill(student, teacher, table, batch)?.0)
}

/// Loss plus gradient with respect to the flattened projection.
pub fn grad_distill(
    student: &StudentProjection,
    teacher: &TeacherScores,
    table: &EmbeddingTable,
    batch: &[(QueryId, StoryId)],
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; student.p.len()];
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (query_id, story_id) in batch {
        let logit = teacher.require(query_id, story_id)?;
        let a = table.require(query_id)?;
        let b = table.require(story_id)?;
        let u = student.project(a)?;
        let v = student.project(b)?;
        let (nu, nv) = (norm(&u), norm(&v));
        if nu == 0.0 || nv == 0.0 {
            return Err(Error::Domain(String::from(
                "projected embedding collapsed to zero norm",
            )));
        }
        let c = dot(&u, &v) / (nu * nv);
        let residual = sigmoid(logit) - c;
        loss += residual * residual * scale;
        // dL/dc = -2 residual / B; chain through cos(u, v)
        let dldc = -2.0 * residual * scale;
        for row in 0..student.out_dim {
            let dcdu = v[row] / (nu * nv) - c * u[row] / (nu * nu);
            let dcdv = u[row] / (nu * nv) - c * v[row] / (nv * nv);
            let grad_row = &mut grad[row * student.in_dim..(row + 1) * student.in_dim];
            for (g, (&ai, &bi)) in grad_row.iter_mut().zip(a.iter().zip(b)) {
                *g += dldc * (dcdu * ai + dcdv * bi);
            }
        }
    }
    Ok((loss, grad))
}

/// Distillation hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Projection width p; `None` means square (p = d).
    pub proj_dim: Option<usize>,
    pub learning_rate: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl DistillConfig {
    pub fn new(seed: u64) -> DistillConfig {
        DistillConfig {
            proj_dim: None,
            learning_rate: 1e-3,
            batch: 64,
            max_epochs: 50,
            patience: 5,
            seed,
        }
    }
}

fn pairs_for(
    queries: &[QueryId],
    pools: &BTreeMap<QueryId, PoolSet>,
) -> Result<Vec<(QueryId, StoryId)>> {
    let mut pairs = Vec::new();
    for query_id in queries {
        let set = pools
            .get(query_id)
            .ok_or_else(|| Error::Data(format!("no pools for query {query_id}")))?;
        for story_id in &set.intersection.members {
            pairs.push((query_id.clone(), story_id.clone()));
        }
    }
    Ok(pairs)
}

/// Fit the student to the teacher signal over within-query train pairs,
/// early-stopping on dev distillation loss.
pub fn train_student(
    cfg: &DistillConfig,
    manifest: &SplitManifest,
    pools: &BTreeMap<QueryId, PoolSet>,
    table: &EmbeddingTable,
    teacher: &TeacherScores,
) -> Result<(StudentProjection, Vec<TrainTraceRow>)> {
    if cfg.batch == 0 || cfg.patience == 0 || cfg.learning_rate <= 0.0 {
        return Err(Error::Domain(String::from(
            "distill config: batch and patience must be >= 1, learning_rate > 0",
        )));
    }
    let train_pairs = pairs_for(&manifest.queries_in(Part::Train), pools)?;
    let dev_pairs = pairs_for(&manifest.queries_in(Part::Dev), pools)?;
    if train_pairs.is_empty() {
        return Err(Error::Data(String::from("no train pairs for distillation")));
    }
    // Fail fast on coverage holes rather than mid-epoch.
    for (q, s) in train_pairs.iter().chain(&dev_pairs) {
        teacher.require(q, s)?;
    }

    let out_dim = cfg.proj_dim.unwrap_or(table.dim());
    let mut student = StudentProjection::init(table.dim(), out_dim, cfg.seed)?;
    let mut adam = Adam::new(cfg.learning_rate, student.p.len());
    let mut best = student.clone();
    let mut best_dev = f64::INFINITY;
    let mut epochs_since_best = 0usize;
    let mut trace = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_pairs.len()).collect();
        SplitMix64::derived(cfg.seed, &format!("distill-epoch|{epoch}")).shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<(QueryId, StoryId)> =
                chunk.iter().map(|&i| train_pairs[i].clone()).collect();
            let (loss, grad) = grad_distill(&student, teacher, table, &batch)?;
            total += loss * batch.len() as f64;
            adam.step(&mut student.p, &grad);
        }
        let train_loss = total / train_pairs.len() as f64;
        let dev_loss = if dev_pairs.is_empty() {
            train_loss
        } else {
            loss_distill(&student, teacher, table, &dev_pairs)?
        };
        trace.push(TrainTraceRow { epoch, train_loss, dev_metric: dev_loss });
        if dev_loss < best_dev - 1e-12 {
            best_dev = dev_loss;
            best = student.clone();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok((best, trace))
}

/// Rank a pool by projected cosine similarity.
pub fn rank_student(
    student: &StudentProjection,
    query_id: &str,
    pool: &CandidatePool,
    table: &EmbeddingTable,
) -> Result<Vec<Scored>> {
    let e_q = table.require(query_id)?;
    let u = student.project(e_q)?;
    let nu = norm(&u);
    let scored = pool
        .members
        .iter()
        .map(|id| {
            let v = student.project(table.require(id)?)?;
            let nv = norm(&v);
            if nu == 0.0 || nv == 0.0 {
                return Err(Error::Domain(String::from(
                    "projected embedding collapsed to zero norm",
                )));
            }
            Ok(Scored { story_id: id.clone(), score: dot(&u, &v) / (nu * nv) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sort_scored(scored))
}
