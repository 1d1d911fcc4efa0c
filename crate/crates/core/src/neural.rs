//! Lightweight MLP ranker over frozen embeddings, trained on supervision
//! grades with pointwise MSE, pairwise RankNet, or ListMLE.
//!
//! The scorer is f(h) = w2^T ReLU(W1 h + b1) + b2 over the joint feature
//! h(s, q) = [e_q ; e_s]. Training is plain Adam with dev-set early
//! stopping on nDCG@5 computed against supervision grades (the only
//! labels legal before the evaluate phase). Everything is seeded and
//! reduces in a fixed order, so identical configs produce bit-identical
//! parameters.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, log1p, sqrt};
use serde::{Deserialize, Serialize};

use crate::corpus::Grade;
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::metrics::ndcg_at_k;
use crate::pools::PoolSet;
use crate::rng::{fnv1a_64, mix64, SplitMix64};
use crate::splits::{Part, SplitManifest};
use crate::vault::SupervisionView;
use crate::{QueryId, StoryId};

/// Dev-selection metric depth (nDCG@5 on supervision grades).
const DEV_K: usize = 5;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// log(1 + exp(x)) without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + log1p(exp(-x.abs()))
}

/// Joint feature h(s, q) = [e_q ; e_s].
pub fn joint_feature(e_q: &[f64], e_s: &[f64]) -> Vec<f64> {
    let mut h = Vec::with_capacity(e_q.len() + e_s.len());
    h.extend_from_slice(e_q);
    h.extend_from_slice(e_s);
    h
}

/// MLP parameters theta = {W1, b1, w2, b2}, stored flat as
/// [W1 row-major | b1 | w2 | b2] so the optimizer and the finite
/// difference checks can treat them as one vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub input: usize,
    pub hidden: usize,
    theta: Vec<f64>,
}

impl MlpParams {
    pub fn n_params(input: usize, hidden: usize) -> usize {
        hidden * input + hidden + hidden + 1
    }

    /// Zero parameters.
    pub fn zeros(input: usize, hidden: usize) -> MlpParams {
        MlpParams { input, hidden, theta: vec![0.0; Self::n_params(input, hidden)] }
    }

    /// Seeded init: weights uniform(-a, a) with a = sqrt(6/(fan_in +
    /// fan_out)) per layer, biases zero.
    pub fn init(input: usize, hidden: usize, seed: u64) -> MlpParams {
        let mut p = MlpParams::zeros(input, hidden);
        let mut rng = SplitMix64::derived(seed, "mlp-init");
        let bound1 = sqrt(6.0 / (input + hidden) as f64);
        for i in 0..hidden * input {
            p.theta[i] = (rng.next_f64() * 2.0 - 1.0) * bound1;
        }
        let bound2 = sqrt(6.0 / (hidden + 1) as f64);
        let w2_start = hidden * input + hidden;
        for i in 0..hidden {
            p.theta[w2_start + i] = (rng.next_f64() * 2.0 - 1.0) * bound2;
        }
        p
    }

    pub fn from_flat(input: usize, hidden: usize, theta: Vec<f64>) -> Result<MlpParams> {
        if theta.len() != Self::n_params(input, hidden) {
            return Err(Error::Domain(format!(
                "parameter vector of length {} does not match ({input}, {hidden})",
                theta.len()
            )));
        }
        Ok(MlpParams { input, hidden, theta })
    }

    pub fn flat(&self) -> &[f64] {
        &self.theta
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn w1(&self) -> &[f64] {
        &self.theta[..self.hidden * self.input]
    }

    pub fn b1(&self) -> &[f64] {
        &self.theta[self.hidden * self.input..self.hidden * self.input + self.hidden]
    }

    pub fn w2(&self) -> &[f64] {
        let start = self.hidden * self.input + self.hidden;
        &self.theta[start..start + self.hidden]
    }

    pub fn b2(&self) -> f64 {
        self.theta[self.theta.len() - 1]
    }

    /// f(h) = w2^T ReLU(W1 h + b1) + b2.
    pub fn score(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.input {
            return Err(Error::Domain(format!(
                "feature of dim {} fed to MLP with input dim {}",
                h.len(),
                self.input
            )));
        }
        Ok(self.forward(h).0)
    }

    /// Forward pass returning (f, pre-activations).
    fn forward(&self, h: &[f64]) -> (f64, Vec<f64>) {
        let (w1, b1, w2, b2) = (self.w1(), self.b1(), self.w2(), self.b2());
        let mut z = vec![0.0; self.hidden];
        for j in 0..self.hidden {
            let row = &w1[j * self.input..(j + 1) * self.input];
            let mut acc = b1[j];
            for (w, x) in row.iter().zip(h) {
                acc += w * x;
            }
            z[j] = acc;
        }
        let mut f = b2;
        for j in 0..self.hidden {
            if z[j] > 0.0 {
                f += w2[j] * z[j];
            }
        }
        (f, z)
    }

    /// Accumulate d(upstream * f)/dtheta into `grad` given the forward
    /// state of one feature.
    fn backward(&self, h: &[f64], z: &[f64], upstream: f64, grad: &mut [f64]) {
        let w2 = self.w2();
        let w2_start = self.hidden * self.input + self.hidden;
        let b2_idx = grad.len() - 1;
        grad[b2_idx] += upstream;
        for j in 0..self.hidden {
            if z[j] > 0.0 {
                grad[w2_start + j] += upstream * z[j];
                let dz = upstream * w2[j];
                grad[self.hidden * self.input + j] += dz;
                let row = &mut grad[j * self.input..(j + 1) * self.input];
                for (g, x) in row.iter_mut().zip(h) {
                    *g += dz * x;
                }
            }
        }
    }
}

/// Pointwise MSE against normalized grades: mean over the batch of
/// (f(h) - y/5)^2.
pub fn loss_pointwise(params: &MlpParams, batch: &[(&[f64], Grade)]) -> f64 {
    grad_pointwise(params, batch).0
}

pub fn grad_pointwise(params: &MlpParams, batch: &[(&[f64], Grade)]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.theta.len()];
    if batch.is_empty() {
        return (0.0, grad);
    }
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for (h, grade) in batch {
        let (f, z) = params.forward(h);
        let target = grade.get() as f64 / 5.0;
        let diff = f - target;
        loss += diff * diff / n;
        params.backward(h, &z, 2.0 * diff / n, &mut grad);
    }
    (loss, grad)
}

/// RankNet loss over strictly ordered pairs: -sum log sigma(f_i - f_j),
/// where the first element of each pair carries the higher grade.
pub fn loss_pairwise(params: &MlpParams, pairs: &[(&[f64], &[f64])]) -> f64 {
    grad_pairwise(params, pairs).0
}

pub fn grad_pairwise(params: &MlpParams, pairs: &[(&[f64], &[f64])]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.theta.len()];
    let mut loss = 0.0;
    for (h_hi, h_lo) in pairs {
        let (f_hi, z_hi) = params.forward(h_hi);
        let (f_lo, z_lo) = params.forward(h_lo);
        let margin = f_hi - f_lo;
        loss += softplus(-margin); // -log sigmoid(margin)
        let up = sigmoid(margin) - 1.0; // d/dmargin
        params.backward(h_hi, &z_hi, up, &mut grad);
        params.backward(h_lo, &z_lo, -up, &mut grad);
    }
    (loss, grad)
}

/// Plackett-Luce negative log-likelihood of the given target order:
/// -sum_i [f(pi_i) - log sum_{j>=i} exp f(pi_j)], stabilised with
/// suffix logaddexp.
pub fn loss_listmle(params: &MlpParams, list: &[&[f64]]) -> Result<f64> {
    Ok(grad_listmle(params, list)?.0)
}

pub fn grad_listmle(params: &MlpParams, list: &[&[f64]]) -> Result<(f64, Vec<f64>)> {
    if list.is_empty() {
        return Err(Error::Domain(String::from("listmle over empty list")));
    }
    let n = list.len();
    let mut scores = Vec::with_capacity(n);
    let mut pre_acts = Vec::with_capacity(n);
    for h in list {
        let (f, z) = params.forward(h);
        scores.push(f);
        pre_acts.push(z);
    }
    // suffix logsumexp: lse[i] = log sum_{j>=i} exp(f_j)
    let mut lse = vec![0.0; n];
    lse[n - 1] = scores[n - 1];
    for i in (0..n - 1).rev() {
        let (a, b) = (scores[i], lse[i + 1]);
        let m = a.max(b);
        lse[i] = m + libm::log(exp(a - m) + exp(b - m));
    }
    let mut loss = 0.0;
    for i in 0..n {
        loss += lse[i] - scores[i];
    }
    // dL/df_t = sum_{i<=t} exp(f_t - lse_i) - 1; f_t <= lse_i for t >= i
    // keeps every exponent non-positive.
    let mut dscore = vec![-1.0; n];
    for i in 0..n {
        for t in i..n {
            dscore[t] += exp(scores[t] - lse[i]);
        }
    }
    let mut grad = vec![0.0; params.theta.len()];
    for t in 0..n {
        params.backward(list[t], &pre_acts[t], dscore[t], &mut grad);
    }
    Ok((loss, grad))
}

/// All strictly-ordered preference pairs, capped by seeded sampling.
///
/// Enumeration is (higher, lower) over the id-sorted grade map; when the
/// count exceeds `cap`, a seeded shuffle keeps exactly `cap` distinct
/// pairs. Callers make the draw query-specific by folding the query id
/// into `seed` (see [`pair_seed`]).
pub fn sample_pairs(
    grades: &BTreeMap<StoryId, Grade>,
    cap: usize,
    seed: u64,
) -> Vec<(StoryId, StoryId)> {
    let items: Vec<(&StoryId, Grade)> = grades.iter().map(|(id, g)| (id, *g)).collect();
    let mut pairs = Vec::new();
    for (hi_id, hi) in &items {
        for (lo_id, lo) in &items {
            if hi > lo {
                pairs.push(((*hi_id).clone(), (*lo_id).clone()));
            }
        }
    }
    if pairs.len() > cap {
        let mut rng = SplitMix64::derived(seed, "pair-sample");
        rng.shuffle(&mut pairs);
        pairs.truncate(cap);
    }
    pairs
}

/// Stream seed for per-query pair sampling.
pub fn pair_seed(config_seed: u64, query_id: &str) -> u64 {
    mix64(config_seed ^ fnv1a_64(query_id.as_bytes()))
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Pointwise,
    Pairwise,
    Listmle,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Pointwise => "pointwise",
            LossKind::Pairwise => "pairwise",
            LossKind::Listmle => "listmle",
        }
    }
}

/// Hyperparameters. Defaults match the documented conventions: Adam at
/// lr 1e-3, batch 64, hidden 256, 50 epochs, patience 5, 800-pair cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub pair_cap: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(loss: LossKind, seed: u64) -> TrainConfig {
        TrainConfig {
            loss,
            hidden: 256,
            learning_rate: 1e-3,
            batch: 64,
            max_epochs: 50,
            patience: 5,
            pair_cap: 800,
            train_fraction: 1.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch == 0 {
            return Err(Error::Domain(String::from("hidden and batch must be >= 1")));
        }
        if self.patience == 0 {
            return Err(Error::Domain(String::from("patience must be >= 1")));
        }
        if self.pair_cap == 0 {
            return Err(Error::Domain(String::from("pair_cap must be >= 1")));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Domain(format!(
                "train_fraction must be in (0, 1], got {}",
                self.train_fraction
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Domain(String::from("learning_rate must be > 0")));
        }
        Ok(())
    }
}

/// Adam optimizer (beta1 0.9, beta2 0.999, eps 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Adam {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (sqrt(v_hat) + self.eps);
        }
    }
}

/// One line of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTraceRow {
    pub epoch: usize,
    pub train_loss: f64,
    /// nDCG@5 on dev queries against supervision grades.
    pub dev_metric: f64,
}

struct QueryBlock {
    query_id: QueryId,
    members: Vec<StoryId>,
    features: Vec<Vec<f64>>,
    grades: Vec<Grade>,
}

fn collect_blocks(
    queries: &[QueryId],
    pools: &BTreeMap<QueryId, PoolSet>,
    table: &EmbeddingTable,
    grades: &BTreeMap<StoryId, Grade>,
) -> Result<Vec<QueryBlock>> {
    let mut blocks = Vec::new();
    for query_id in queries {
        let set = pools
            .get(query_id)
            .ok_or_else(|| Error::Data(format!("no pools for query {query_id}")))?;
        let members = set.intersection.members.clone();
        if members.is_empty() {
            continue;
        }
        let e_q = table.require(query_id)?;
        let mut features = Vec::with_capacity(members.len());
        let mut block_grades = Vec::with_capacity(members.len());
        for id in &members {
            features.push(joint_feature(e_q, table.require(id)?));
            block_grades.push(grades.get(id).copied().ok_or_else(|| {
                Error::Data(format!("intersection member {id} lacks a supervision grade"))
            })?);
        }
        blocks.push(QueryBlock {
            query_id: query_id.clone(),
            members,
            features,
            grades: block_grades,
        });
    }
    Ok(blocks)
}

/// Whole-query subsampling for the training-fraction ablation.
fn apply_train_fraction(mut queries: Vec<QueryId>, fraction: f64, seed: u64) -> Vec<QueryId> {
    if fraction >= 1.0 {
        return queries;
    }
    let keep = (libm::ceil(queries.len() as f64 * fraction) as usize).max(1);
    SplitMix64::derived(seed, "train-fraction").shuffle(&mut queries);
    queries.truncate(keep);
    queries.sort_unstable();
    queries
}

/// Train the MLP ranker on supervision grades with dev early stopping.
///
/// Returns the best-dev checkpoint and the per-epoch trace. With
/// `max_epochs` 0 the seeded initialization is returned untouched.
pub fn train(
    cfg: &TrainConfig,
    manifest: &SplitManifest,
    pools: &BTreeMap<QueryId, PoolSet>,
    table: &EmbeddingTable,
    supervision: &SupervisionView<'_>,
) -> Result<(MlpParams, Vec<TrainTraceRow>)> {
    cfg.validate()?;
    let grades = supervision.snapshot();
    let train_queries = apply_train_fraction(
        manifest.queries_in(Part::Train),
        cfg.train_fraction,
        cfg.seed,
    );
    let train_blocks = collect_blocks(&train_queries, pools, table, &grades)?;
    let dev_blocks = collect_blocks(&manifest.queries_in(Part::Dev), pools, table, &grades)?;
    if train_blocks.is_empty() {
        return Err(Error::Data(String::from("no non-empty training pools")));
    }

    let input = 2 * table.dim();
    let mut params = MlpParams::init(input, cfg.hidden, cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate, params.flat().len());
    let mut best_params = params.clone();
    let mut best_metric = f64::NEG_INFINITY;
    let mut epochs_since_best = 0usize;
    let mut trace = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let train_loss = match cfg.loss {
            LossKind::Pointwise => {
                run_pointwise_epoch(&mut params, &mut adam, &train_blocks, cfg, epoch)
            }
            LossKind::Pairwise => {
                run_pairwise_epoch(&mut params, &mut adam, &train_blocks, cfg, epoch)
            }
            LossKind::Listmle => {
                run_listmle_epoch(&mut params, &mut adam, &train_blocks, cfg, epoch)?
            }
        };
        let dev_metric = if dev_blocks.is_empty() {
            // No dev queries: fall back to train loss so early stopping
            // still has a signal (improvement = loss decrease).
            -train_loss
        } else {
            dev_ndcg(&params, &dev_blocks)?
        };
        trace.push(TrainTraceRow { epoch, train_loss, dev_metric });
        if dev_metric > best_metric + 1e-12 {
            best_metric = dev_metric;
            best_params = params.clone();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok((best_params, trace))
}

fn shuffled_indices(n: usize, seed: u64, label: &str) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    SplitMix64::derived(seed, label).shuffle(&mut idx);
    idx
}

fn run_pointwise_epoch(
    params: &mut MlpParams,
    adam: &mut Adam,
    blocks: &[QueryBlock],
    cfg: &TrainConfig,
    epoch: usize,
) -> f64 {
    let mut items: Vec<(&[f64], Grade)> = Vec::new();
    for block in blocks {
        for (h, g) in block.features.iter().zip(&block.grades) {
            items.push((h.as_slice(), *g));
        }
    }
    let order = shuffled_indices(items.len(), cfg.seed, &format!("pointwise-epoch|{epoch}"));
    let mut total = 0.0;
    for chunk in order.chunks(cfg.batch) {
        let batch: Vec<(&[f64], Grade)> = chunk.iter().map(|&i| items[i]).collect();
        let (loss, grad) = grad_pointwise(params, &batch);
        total += loss * batch.len() as f64;
        adam.step(params.flat_mut(), &grad);
    }
    total / items.len() as f64
}

fn run_pairwise_epoch(
    params: &mut MlpParams,
    adam: &mut Adam,
    blocks: &[QueryBlock],
    cfg: &TrainConfig,
    epoch: usize,
) -> f64 {
    // Pair sets are fixed per (query, seed); only batch order reshuffles
    // across epochs.
    let mut pairs: Vec<(&[f64], &[f64])> = Vec::new();
    for block in blocks {
        let grade_map: BTreeMap<StoryId, Grade> = block
            .members
            .iter()
            .cloned()
            .zip(block.grades.iter().copied())
            .collect();
        let index_of: BTreeMap<&StoryId, usize> =
            block.members.iter().enumerate().map(|(i, id)| (id, i)).collect();
        for (hi, lo) in sample_pairs(&grade_map, cfg.pair_cap, pair_seed(cfg.seed, &block.query_id)) {
            pairs.push((
                block.features[index_of[&hi]].as_slice(),
                block.features[index_of[&lo]].as_slice(),
            ));
        }
    }
    if pairs.is_empty() {
        return 0.0;
    }
    let order = shuffled_indices(pairs.len(), cfg.seed, &format!("pairwise-epoch|{epoch}"));
    let mut total = 0.0;
    for chunk in order.chunks(cfg.batch) {
        let batch: Vec<(&[f64], &[f64])> = chunk.iter().map(|&i| pairs[i]).collect();
        let (loss, mut grad) = grad_pairwise(params, &batch);
        total += loss;
        // mean-scale the summed pair gradient for a stable step size
        let scale = 1.0 / batch.len() as f64;
        for g in &mut grad {
            *g *= scale;
        }
        adam.step(params.flat_mut(), &grad);
    }
    total / pairs.len() as f64
}

fn run_listmle_epoch(
    params: &mut MlpParams,
    adam: &mut Adam,
    blocks: &[QueryBlock],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    // Target order per epoch: grades descending, ties broken by a fresh
    // seeded shuffle so no story-id bias leaks into the target.
    let mut lists: Vec<Vec<&[f64]>> = Vec::with_capacity(blocks.len());
    for block in blocks {
        let mut idx: Vec<usize> = (0..block.members.len()).collect();
        SplitMix64::derived(cfg.seed, &format!("listmle-ties|{epoch}|{}", block.query_id))
            .shuffle(&mut idx);
        idx.sort_by(|&a, &b| block.grades[b].cmp(&block.grades[a]));
        lists.push(idx.into_iter().map(|i| block.features[i].as_slice()).collect());
    }
    let order = shuffled_indices(lists.len(), cfg.seed, &format!("listmle-epoch|{epoch}"));
    let mut total = 0.0;
    for chunk in order.chunks(cfg.batch) {
        let mut grad_sum = vec![0.0; params.flat().len()];
        let mut loss_sum = 0.0;
        for &i in chunk {
            let (loss, grad) = grad_listmle(params, &lists[i])?;
            loss_sum += loss;
            for (a, g) in grad_sum.iter_mut().zip(&grad) {
                *a += g;
            }
        }
        let scale = 1.0 / chunk.len() as f64;
        for g in &mut grad_sum {
            *g *= scale;
        }
        total += loss_sum;
        adam.step(params.flat_mut(), &grad_sum);
    }
    Ok(total / lists.len() as f64)
}

/// Rank a feature block with the current params (desc score, ties by id).
fn rank_block(params: &MlpParams, block: &QueryBlock) -> Result<Vec<StoryId>> {
    let mut scored: Vec<(f64, &StoryId)> = block
        .features
        .iter()
        .zip(&block.members)
        .map(|(h, id)| Ok((params.score(h)?, id)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(scored.into_iter().map(|(_, id)| id.clone()).collect())
}

fn dev_ndcg(params: &MlpParams, blocks: &[QueryBlock]) -> Result<f64> {
    let mut total = 0.0;
    for block in blocks {
        let ranked = rank_block(params, block)?;
        let grade_map: BTreeMap<StoryId, Grade> = block
            .members
            .iter()
            .cloned()
            .zip(block.grades.iter().copied())
            .collect();
        total += ndcg_at_k(&ranked, &grade_map, DEV_K)?;
    }
    Ok(total / blocks.len() as f64)
}

/// Score one (query, story) pair with a trained model.
pub fn score_pair(
    params: &MlpParams,
    table: &EmbeddingTable,
    query_id: &str,
    story_id: &str,
) -> Result<f64> {
    let h = joint_feature(table.require(query_id)?, table.require(story_id)?);
    params.score(&h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn rng_feature(rng: &mut SplitMix64, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.next_normal()).collect()
    }

    #[test]
    fn score_zero_params_is_zero() {
        let p = MlpParams::zeros(4, 3);
        assert_eq!(p.score(&[1.0, -2.0, 0.5, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn score_relu_gates_negative_preactivation() {
        // single hidden unit: w1 = [1, 0], b1 = 0, w2 = [1], b2 = 0
        let p = MlpParams::from_flat(2, 1, vec![1.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(p.score(&[-3.0, 9.9]).unwrap(), 0.0);
        assert_eq!(p.score(&[2.0, 9.9]).unwrap(), 2.0);
    }

    #[test]
    fn score_matches_naive_recomputation() {
        let mut rng = SplitMix64::new(5);
        let (input, hidden) = (6, 4);
        let theta: Vec<f64> = (0..MlpParams::n_params(input, hidden))
            .map(|_| rng.next_normal() * 0.5)
            .collect();
        let p = MlpParams::from_flat(input, hidden, theta.clone()).unwrap();
        let h = rng_feature(&mut rng, input);
        // scalar-by-scalar recomputation from the flat layout
        let mut expect = theta[theta.len() - 1];
        for j in 0..hidden {
            let mut z = theta[hidden * input + j];
            for i in 0..input {
                z += theta[j * input + i] * h[i];
            }
            if z > 0.0 {
                expect += theta[hidden * input + hidden + j] * z;
            }
        }
        assert!((p.score(&h).unwrap() - expect).abs() < 1e-9);
        assert!(p.score(&[0.0; 3]).is_err());
    }

    #[test]
    fn pointwise_loss_examples() {
        // constant output 0.6 (zero weights, b2 = 0.6) vs grade 3
        let mut p = MlpParams::zeros(2, 2);
        let n = p.flat().len();
        p.flat_mut()[n - 1] = 0.6;
        let h = [0.1, 0.2];
        let batch = [(&h[..], Grade::new(3).unwrap())];
        assert!(loss_pointwise(&p, &batch).abs() < 1e-15);

        let zero = MlpParams::zeros(2, 2);
        let batch = [(&h[..], Grade::new(5).unwrap())];
        assert!((loss_pointwise(&zero, &batch) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pointwise_matches_hand_summation() {
        let mut rng = SplitMix64::new(8);
        let p = MlpParams::init(4, 3, 1);
        let feats: Vec<Vec<f64>> = (0..5).map(|_| rng_feature(&mut rng, 4)).collect();
        let grades = [1, 3, 5, 2, 4];
        let batch: Vec<(&[f64], Grade)> = feats
            .iter()
            .zip(grades)
            .map(|(h, g)| (h.as_slice(), Grade::new(g).unwrap()))
            .collect();
        let mut expect = 0.0;
        for (h, g) in &batch {
            let d = p.score(h).unwrap() - g.get() as f64 / 5.0;
            expect += d * d;
        }
        expect /= batch.len() as f64;
        assert!((loss_pointwise(&p, &batch) - expect).abs() < 1e-12);
    }

    #[test]
    fn pairwise_loss_examples() {
        let zero = MlpParams::zeros(2, 2); // every score 0, margin 0
        let (a, b) = ([0.1, 0.2], [0.3, 0.4]);
        let pairs = [(&a[..], &b[..])];
        let ln2 = core::f64::consts::LN_2;
        assert!((loss_pairwise(&zero, &pairs) - ln2).abs() < 1e-15);
    }

    #[test]
    fn pairwise_loss_decreases_in_margin() {
        // single passthrough unit so margin = h_hi[0] - h_lo[0]
        let p = MlpParams::from_flat(1, 1, vec![1.0, 10.0, 1.0, -10.0]).unwrap();
        let mut last = f64::INFINITY;
        for m in [-2.0, -0.5, 0.0, 0.5, 2.0, 8.0] {
            let hi = [m];
            let lo = [0.0];
            let loss = loss_pairwise(&p, &[(&hi[..], &lo[..])]);
            assert!(loss < last);
            last = loss;
        }
        // large positive margin drives loss toward 0
        assert!(last < 1e-3);
    }

    #[test]
    fn listmle_examples() {
        let zero = MlpParams::zeros(2, 2);
        let a = [0.5, 0.1];
        let single = [&a[..]];
        assert!(loss_listmle(&zero, &single).unwrap().abs() < 1e-15);

        let b = [0.7, -0.3];
        let two = [&a[..], &b[..]];
        let ln2 = core::f64::consts::LN_2;
        assert!((loss_listmle(&zero, &two).unwrap() - ln2).abs() < 1e-12);
        assert!(loss_listmle(&zero, &[]).is_err());
    }

    #[test]
    fn listmle_matches_bruteforce_chain() {
        let mut rng = SplitMix64::new(21);
        let p = MlpParams::init(4, 3, 9);
        let feats: Vec<Vec<f64>> = (0..4).map(|_| rng_feature(&mut rng, 4)).collect();
        let list: Vec<&[f64]> = feats.iter().map(Vec::as_slice).collect();
        let scores: Vec<f64> = list.iter().map(|h| p.score(h).unwrap()).collect();
        // naive log-softmax chain
        let mut expect = 0.0;
        for i in 0..scores.len() {
            let denom: f64 = scores[i..].iter().map(|f| libm::exp(*f)).sum();
            expect += libm::log(denom) - scores[i];
        }
        assert!((loss_listmle(&p, &list).unwrap() - expect).abs() < 1e-9);
    }

    fn fd_check(
        loss_at: impl Fn(&MlpParams) -> f64,
        grad: &[f64],
        base: &MlpParams,
        tol: f64,
    ) {
        let eps = 1e-4;
        for i in 0..grad.len() {
            let mut plus = base.clone();
            plus.flat_mut()[i] += eps;
            let mut minus = base.clone();
            minus.flat_mut()[i] -= eps;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
            let denom = fd.abs().max(grad[i].abs()).max(1e-6);
            assert!(
                (fd - grad[i]).abs() / denom < tol,
                "param {i}: fd {fd} vs analytic {}",
                grad[i]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences_smoke() {
        // Full 100-instance sweeps live in the acceptance suite; this is
        // the fast inline version.
        let mut rng = SplitMix64::new(33);
        let (input, hidden) = (5, 3);
        let p = MlpParams::init(input, hidden, 77);
        let feats: Vec<Vec<f64>> = (0..6).map(|_| rng_feature(&mut rng, input)).collect();

        let batch: Vec<(&[f64], Grade)> = feats
            .iter()
            .zip([1i64, 4, 2, 5, 3, 2])
            .map(|(h, g)| (h.as_slice(), Grade::new(g).unwrap()))
            .collect();
        let (_, g) = grad_pointwise(&p, &batch);
        fd_check(|q| loss_pointwise(q, &batch), &g, &p, 1e-4);

        let pairs: Vec<(&[f64], &[f64])> =
            (0..3).map(|i| (feats[i].as_slice(), feats[i + 3].as_slice())).collect();
        let (_, g) = grad_pairwise(&p, &pairs);
        fd_check(|q| loss_pairwise(q, &pairs), &g, &p, 1e-4);

        let list: Vec<&[f64]> = feats.iter().map(Vec::as_slice).collect();
        let (_, g) = grad_listmle(&p, &list).unwrap();
        fd_check(|q| loss_listmle(q, &list).unwrap(), &g, &p, 1e-4);
    }

    #[test]
    fn sample_pairs_enumeration_and_cap() {
        let grades: BTreeMap<StoryId, Grade> = [("a", 5), ("b", 3), ("c", 3), ("d", 1)]
            .into_iter()
            .map(|(id, g)| (id.to_string(), Grade::new(g).unwrap()))
            .collect();
        let pairs = sample_pairs(&grades, 100, 0);
        assert_eq!(pairs.len(), 5); // (a,b) (a,c) (a,d) (b,d) (c,d)
        for (hi, lo) in &pairs {
            assert!(grades[hi] > grades[lo]);
        }

        let tied: BTreeMap<StoryId, Grade> = [("a", 3), ("b", 3)]
            .into_iter()
            .map(|(id, g)| (id.to_string(), Grade::new(g).unwrap()))
            .collect();
        assert!(sample_pairs(&tied, 100, 0).is_empty());

        let many: BTreeMap<StoryId, Grade> = (0..60)
            .map(|i| (format!("s{i:02}"), Grade::new(i % 5 + 1).unwrap()))
            .collect();
        let capped = sample_pairs(&many, 800, 7);
        assert_eq!(capped.len(), 800);
        let distinct: alloc::collections::BTreeSet<_> = capped.iter().collect();
        assert_eq!(distinct.len(), 800);
        assert_eq!(capped, sample_pairs(&many, 800, 7)); // deterministic
    }
}
