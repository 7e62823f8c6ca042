//! DistMult knowledge-graph embeddings trained with logsigmoid negative
//! sampling and plain SGD. The trained item rows become the base embeddings
//! fed to the multiplex model.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{KnowledgeGraph, Relation, Triple};
use crate::matrix::{EmbeddingMatrix, MatrixError};
use crate::par::{self, ThreadMode};
use crate::seed;

#[derive(Debug, Error)]
pub enum KgeError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no triples to train on")]
    NoTriples,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite parameter after epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KgeConfig {
    pub dim: usize,
    pub batch_size: usize,
    pub neg_sample_size: usize,
    pub regularization_coef: f64,
    /// Initialization scale: entries start uniform in `(-gamma/dim, gamma/dim)`.
    pub gamma: f64,
    pub learning_rate: f64,
    pub optimizer: KgeOptimizer,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KgeOptimizer {
    /// Row-wise Adagrad: each embedding row keeps one accumulator, the
    /// running sum of its mean squared gradient.
    #[default]
    Adagrad,
    Sgd,
}

impl Default for KgeConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            batch_size: 1000,
            neg_sample_size: 200,
            regularization_coef: 1e-9,
            gamma: 19.9,
            learning_rate: 0.25,
            optimizer: KgeOptimizer::Adagrad,
            epochs: 30,
            seed: 0,
        }
    }
}

impl KgeConfig {
    pub fn validate(&self) -> Result<(), KgeError> {
        let bad = |m: &str| Err(KgeError::InvalidConfig(m.into()));
        if self.dim == 0 || self.batch_size == 0 || self.neg_sample_size == 0 {
            return bad("dim, batch_size and neg_sample_size must be positive");
        }
        if !(self.gamma > 0.0) || !(self.learning_rate >= 0.0) || !(self.regularization_coef >= 0.0) {
            return bad("gamma must be positive; learning_rate and regularization_coef non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KgeModel {
    dim: usize,
    entities: Vec<f64>,
    relations: Vec<f64>,
}

/// Trilinear DistMult score `sum_k h[k] * r[k] * t[k]`.
pub fn distmult_score(h: &[f64], r: &[f64], t: &[f64]) -> Result<f64, KgeError> {
    if h.len() != r.len() {
        return Err(KgeError::DimensionMismatch(h.len(), r.len()));
    }
    if h.len() != t.len() {
        return Err(KgeError::DimensionMismatch(h.len(), t.len()));
    }
    Ok(trilinear(h, r, t))
}

fn trilinear(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    h.iter().zip(r).zip(t).map(|((a, b), c)| a * b * c).sum()
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

impl KgeModel {
    pub fn init(entity_count: usize, relation_count: usize, config: &KgeConfig) -> Self {
        let bound = config.gamma / config.dim as f64;
        let mut rng = seed::rng(config.seed, &[seed::label("kge-init")]);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let entities = draw(entity_count * config.dim);
        let relations = draw(relation_count * config.dim);
        Self { dim: config.dim, entities, relations }
    }

    pub fn from_parts(dim: usize, entities: Vec<f64>, relations: Vec<f64>) -> Self {
        assert_eq!(entities.len() % dim, 0);
        assert_eq!(relations.len() % dim, 0);
        Self { dim, entities, relations }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len() / self.dim
    }

    pub fn entity(&self, e: u32) -> &[f64] {
        let d = self.dim;
        &self.entities[e as usize * d..(e as usize + 1) * d]
    }

    pub fn relation(&self, r: Relation) -> &[f64] {
        let d = self.dim;
        &self.relations[r.index() * d..(r.index() + 1) * d]
    }

    pub fn entity_mut(&mut self, e: u32) -> &mut [f64] {
        let d = self.dim;
        &mut self.entities[e as usize * d..(e as usize + 1) * d]
    }

    pub fn relation_mut(&mut self, r: Relation) -> &mut [f64] {
        let d = self.dim;
        &mut self.relations[r.index() * d..(r.index() + 1) * d]
    }

    pub fn score(&self, t: &Triple) -> f64 {
        trilinear(self.entity(t.head), self.relation(t.relation), self.entity(t.tail))
    }

    pub fn is_finite(&self) -> bool {
        self.entities.iter().chain(&self.relations).all(|x| x.is_finite())
    }

    /// Item-entity rows (ids `0..item_count`) as the base embedding matrix.
    pub fn item_embeddings(&self, kg: &KnowledgeGraph) -> Result<EmbeddingMatrix, KgeError> {
        let n = kg.item_count();
        Ok(EmbeddingMatrix::from_f64_rows(kg.item_ids().to_vec(), self.dim, &self.entities[..n * self.dim])?)
    }
}

/// Corrupted replacements for one positive triple, all on the same side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSample {
    pub corrupt_head: bool,
    pub entities: Vec<u32>,
}

impl NegativeSample {
    fn corrupt(&self, t: &Triple, e: u32) -> Triple {
        if self.corrupt_head {
            Triple { head: e, ..*t }
        } else {
            Triple { tail: e, ..*t }
        }
    }
}

/// Uniform corruption: heads with probability 0.5, tails otherwise. Collisions
/// with true triples are not filtered.
pub fn sample_negatives<R: Rng>(entity_count: usize, n: usize, rng: &mut R) -> NegativeSample {
    let corrupt_head = rng.random_bool(0.5);
    let entities = (0..n).map(|_| rng.random_range(0..entity_count as u32)).collect();
    NegativeSample { corrupt_head, entities }
}

/// Sparse gradient over touched entity rows plus dense relation gradient.
#[derive(Debug, Clone)]
pub struct KgeGrad {
    dim: usize,
    slots: HashMap<u32, usize>,
    order: Vec<u32>,
    entity_rows: Vec<f64>,
    pub relations: Vec<f64>,
}

impl KgeGrad {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            slots: HashMap::new(),
            order: Vec::new(),
            entity_rows: Vec::new(),
            relations: vec![0.0; Relation::COUNT * dim],
        }
    }

    fn row_mut(&mut self, e: u32) -> &mut [f64] {
        let d = self.dim;
        let slot = *self.slots.entry(e).or_insert_with(|| {
            self.order.push(e);
            self.entity_rows.extend(std::iter::repeat_n(0.0, d));
            self.order.len() - 1
        });
        &mut self.entity_rows[slot * d..(slot + 1) * d]
    }

    pub fn entity(&self, e: u32) -> Option<&[f64]> {
        let d = self.dim;
        self.slots.get(&e).map(|&s| &self.entity_rows[s * d..(s + 1) * d])
    }

    pub fn touched(&self) -> &[u32] {
        &self.order
    }

    fn absorb(&mut self, other: &KgeGrad) {
        for &e in &other.order {
            let src = other.entity(e).unwrap().to_vec();
            for (a, b) in self.row_mut(e).iter_mut().zip(src) {
                *a += b;
            }
        }
        for (a, b) in self.relations.iter_mut().zip(&other.relations) {
            *a += b;
        }
    }
}

fn add_scaled(dst: &mut [f64], scale: f64, a: &[f64], b: &[f64]) {
    for ((d, x), y) in dst.iter_mut().zip(a).zip(b) {
        *d += scale * x * y;
    }
}

fn add_reg(dst: &mut [f64], scale: f64, v: &[f64]) {
    for (d, x) in dst.iter_mut().zip(v) {
        *d += scale * x;
    }
}

/// Per-sample loss
/// `-ln s(pos) - (1/N) sum ln s(-neg) + lambda * (|h|^2 + |r|^2 + |t|^2 + sum |neg|^2)`,
/// accumulating `weight * dL` into `grad`.
fn sample_loss_grad(
    model: &KgeModel,
    t: &Triple,
    negs: &NegativeSample,
    lambda: f64,
    weight: f64,
    mut grad: Option<&mut KgeGrad>,
) -> f64 {
    let (h, r, tl) = (model.entity(t.head), model.relation(t.relation), model.entity(t.tail));
    let pos = trilinear(h, r, tl);
    let mut loss = softplus(-pos);
    loss += lambda * (sq_norm(h) + sq_norm(r) + sq_norm(tl));
    if let Some(g) = grad.as_deref_mut() {
        let coef = weight * (sigmoid(pos) - 1.0);
        add_scaled(g.row_mut(t.head), coef, r, tl);
        add_scaled(g.row_mut(t.tail), coef, h, r);
        let ri = t.relation.index() * model.dim;
        add_scaled(&mut g.relations[ri..ri + model.dim], coef, h, tl);
        add_reg(g.row_mut(t.head), weight * 2.0 * lambda, h);
        add_reg(g.row_mut(t.tail), weight * 2.0 * lambda, tl);
        add_reg(&mut g.relations[ri..ri + model.dim], weight * 2.0 * lambda, r);
    }
    let inv_n = 1.0 / negs.entities.len() as f64;
    for &e in &negs.entities {
        let nt = negs.corrupt(t, e);
        let (nh, nl) = (model.entity(nt.head), model.entity(nt.tail));
        let s = trilinear(nh, r, nl);
        loss += inv_n * softplus(s);
        let ev = model.entity(e);
        loss += lambda * sq_norm(ev);
        if let Some(g) = grad.as_deref_mut() {
            let coef = weight * inv_n * sigmoid(s);
            add_scaled(g.row_mut(nt.head), coef, r, nl);
            add_scaled(g.row_mut(nt.tail), coef, nh, r);
            let ri = t.relation.index() * model.dim;
            add_scaled(&mut g.relations[ri..ri + model.dim], coef, nh, nl);
            add_reg(g.row_mut(e), weight * 2.0 * lambda, ev);
        }
    }
    loss
}

const GRAD_CHUNK: usize = 64;

/// Mean loss over the batch and its gradient.
pub fn batch_loss_and_grad(
    model: &KgeModel,
    batch: &[Triple],
    negatives: &[NegativeSample],
    lambda: f64,
    mode: ThreadMode,
) -> (f64, KgeGrad) {
    assert_eq!(batch.len(), negatives.len());
    let weight = 1.0 / batch.len() as f64;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let parts = par::map_chunks(mode, &idx, GRAD_CHUNK, |chunk| {
        let mut g = KgeGrad::new(model.dim);
        let loss: f64 = chunk
            .iter()
            .map(|&i| sample_loss_grad(model, &batch[i], &negatives[i], lambda, weight, Some(&mut g)))
            .sum();
        (loss, g)
    });
    let mut grad = KgeGrad::new(model.dim);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        grad.absorb(g);
    }
    (loss * weight, grad)
}

pub fn batch_loss(model: &KgeModel, batch: &[Triple], negatives: &[NegativeSample], lambda: f64) -> f64 {
    let total: f64 = batch
        .iter()
        .zip(negatives)
        .map(|(t, n)| sample_loss_grad(model, t, n, lambda, 1.0, None))
        .sum();
    total / batch.len() as f64
}

/// Adagrad accumulators, one per entity row and one per relation row.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    entities: Vec<f64>,
    relations: Vec<f64>,
}

impl OptimizerState {
    pub fn new(model: &KgeModel) -> Self {
        Self { entities: vec![0.0; model.entity_count()], relations: vec![0.0; model.relations.len() / model.dim] }
    }
}

fn update_row(row: &mut [f64], grad: &[f64], lr: f64, acc: Option<&mut f64>) {
    let step = match acc {
        None => lr,
        Some(a) => {
            *a += grad.iter().map(|g| g * g).sum::<f64>() / grad.len() as f64;
            lr / (a.sqrt() + 1e-10)
        }
    };
    for (p, g) in row.iter_mut().zip(grad) {
        *p -= step * g;
    }
}

/// One optimizer step on the batch; returns the batch mean loss before the update.
pub fn kge_step(
    model: &mut KgeModel,
    state: &mut OptimizerState,
    batch: &[Triple],
    negatives: &[NegativeSample],
    config: &KgeConfig,
    mode: ThreadMode,
) -> f64 {
    let (loss, grad) = batch_loss_and_grad(model, batch, negatives, config.regularization_coef, mode);
    let lr = config.learning_rate;
    if lr == 0.0 {
        return loss;
    }
    let adagrad = config.optimizer == KgeOptimizer::Adagrad;
    for &e in grad.touched() {
        let acc = adagrad.then(|| &mut state.entities[e as usize]);
        update_row(model.entity_mut(e), grad.entity(e).unwrap(), lr, acc);
    }
    let dim = model.dim;
    for (r, g) in grad.relations.chunks(dim).enumerate() {
        let acc = adagrad.then(|| &mut state.relations[r]);
        update_row(&mut model.relations[r * dim..(r + 1) * dim], g, lr, acc);
    }
    loss
}

#[derive(Debug, Clone)]
pub struct KgeTraining {
    pub model: KgeModel,
    /// Mean per-triple loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

pub fn train_kge(
    triples: &[Triple],
    entity_count: usize,
    config: &KgeConfig,
    mode: ThreadMode,
) -> Result<KgeTraining, KgeError> {
    config.validate()?;
    if triples.is_empty() {
        return Err(KgeError::NoTriples);
    }
    let mut model = KgeModel::init(entity_count, Relation::COUNT, config);
    let mut state = OptimizerState::new(&model);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..triples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut seed::rng(config.seed, &[seed::label("kge-shuffle"), epoch as u64]));
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<Triple> = chunk.iter().map(|&i| triples[i]).collect();
            let negatives = par::map_range(mode, batch.len(), |i| {
                let mut rng =
                    seed::rng(config.seed, &[seed::label("kge-neg"), epoch as u64, b as u64, i as u64]);
                sample_negatives(entity_count, config.neg_sample_size, &mut rng)
            });
            total += kge_step(&mut model, &mut state, &batch, &negatives, config, mode) * batch.len() as f64;
        }
        if !model.is_finite() {
            return Err(KgeError::NonFinite { epoch });
        }
        let mean = total / triples.len() as f64;
        log::debug!("kge epoch {epoch}: loss {mean:.6}");
        epoch_losses.push(mean);
    }
    Ok(KgeTraining { model, epoch_losses })
}

/// Filtered tail-ranking MRR. A candidate tail outranks the truth when it
/// scores at least as high and the candidate triple is not known to be true;
/// ties therefore count against the model.
pub fn filtered_mrr(model: &KgeModel, test: &[Triple], known: &HashSet<Triple>) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let n = model.entity_count() as u32;
    let total: f64 = test
        .iter()
        .map(|t| {
            let hr: Vec<f64> =
                model.entity(t.head).iter().zip(model.relation(t.relation)).map(|(a, b)| a * b).collect();
            let dot = |e: u32| -> f64 { hr.iter().zip(model.entity(e)).map(|(a, b)| a * b).sum() };
            let truth = dot(t.tail);
            let ahead = (0..n)
                .filter(|&c| c != t.tail)
                .filter(|&c| !known.contains(&Triple { tail: c, ..*t }))
                .filter(|&c| dot(c) >= truth)
                .count();
            1.0 / (1 + ahead) as f64
        })
        .sum();
    total / test.len() as f64
}
