//! Flat parameter storage. All shared (dense) parameters live in one vector
//! addressed through a [`Layout`]; per-node context vectors are separate so
//! they can be updated sparsely.

use std::collections::HashMap;
use std::ops::Range;

use rand::Rng;

use super::GatneConfig;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamClass {
    /// Base-to-edge transform weights, per edge type (`s x d_b`).
    EdgeInitWeight,
    EdgeInitBias,
    /// Aggregation map per level (`s x s`).
    Aggregation,
    /// Attention vector per edge type (`d_a`).
    AttentionVector,
    /// Attention matrix per edge type (`d_a x s`).
    AttentionMatrix,
    /// Edge-to-overall projection per edge type (`s x d`).
    EdgeProjection,
    /// Linear base term (`d_b x d`).
    BaseProjection,
    SharedWeight,
    SharedBias,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub dim: usize,
    pub base_dim: usize,
    pub edge_dim: usize,
    pub att_dim: usize,
    pub edge_types: usize,
    pub levels: usize,
    pub shared_depth: usize,
    blocks: Vec<(ParamClass, usize, Range<usize>)>,
    total: usize,
}

impl Layout {
    pub fn new(config: &GatneConfig) -> Self {
        let (d, db, s, da, m) =
            (config.dim, config.base_dim, config.edge_dim, config.att_dim, config.edge_type_count);
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |class, idx, len: usize| {
            blocks.push((class, idx, offset..offset + len));
            offset += len;
        };
        for r in 0..m {
            push(ParamClass::EdgeInitWeight, r, s * db);
            push(ParamClass::EdgeInitBias, r, s);
        }
        for k in 0..config.levels() {
            push(ParamClass::Aggregation, k, s * s);
        }
        for r in 0..m {
            push(ParamClass::AttentionVector, r, da);
            push(ParamClass::AttentionMatrix, r, da * s);
            push(ParamClass::EdgeProjection, r, s * d);
        }
        push(ParamClass::BaseProjection, 0, db * d);
        for l in 0..config.shared_depth {
            let fan_in = if l == 0 { db } else { d };
            push(ParamClass::SharedWeight, l, d * fan_in);
            push(ParamClass::SharedBias, l, d);
        }
        Self {
            dim: d,
            base_dim: db,
            edge_dim: s,
            att_dim: da,
            edge_types: m,
            levels: config.levels(),
            shared_depth: config.shared_depth,
            blocks,
            total: offset,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn range(&self, class: ParamClass, idx: usize) -> Range<usize> {
        self.blocks
            .iter()
            .find(|(c, i, _)| *c == class && *i == idx)
            .map(|(_, _, r)| r.clone())
            .unwrap_or_else(|| panic!("no block {class:?}[{idx}]"))
    }

    /// Every block as `(class, index, range)`.
    pub fn blocks(&self) -> &[(ParamClass, usize, Range<usize>)] {
        &self.blocks
    }

    /// Input width of a shared-transform layer.
    pub fn shared_fan_in(&self, layer: usize) -> usize {
        if layer == 0 {
            self.base_dim
        } else {
            self.dim
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatneParams {
    pub layout: Layout,
    pub dense: Vec<f64>,
    /// Skip-gram output vectors, `n x d`.
    pub context: Vec<f64>,
}

impl GatneParams {
    /// Weights uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero.
    pub fn init(config: &GatneConfig, node_count: usize) -> Self {
        let layout = Layout::new(config);
        let mut rng = seed::rng(config.seed, &[seed::label("gatne-init")]);
        let mut dense = vec![0.0; layout.total()];
        for (class, idx, range) in layout.blocks().to_vec() {
            let fan_in = match class {
                ParamClass::EdgeInitWeight => layout.base_dim,
                ParamClass::Aggregation | ParamClass::AttentionMatrix => layout.edge_dim,
                ParamClass::AttentionVector => layout.att_dim,
                ParamClass::EdgeProjection => layout.edge_dim,
                ParamClass::BaseProjection => layout.base_dim,
                ParamClass::SharedWeight => layout.shared_fan_in(idx),
                ParamClass::EdgeInitBias | ParamClass::SharedBias => continue,
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut dense[range] {
                *v = rng.random_range(-bound..bound);
            }
        }
        let bound = 1.0 / (layout.dim as f64).sqrt();
        let context = (0..node_count * layout.dim).map(|_| rng.random_range(-bound..bound)).collect();
        Self { layout, dense, context }
    }

    pub fn block(&self, class: ParamClass, idx: usize) -> &[f64] {
        &self.dense[self.layout.range(class, idx)]
    }

    pub fn block_mut(&mut self, class: ParamClass, idx: usize) -> &mut [f64] {
        let r = self.layout.range(class, idx);
        &mut self.dense[r]
    }

    pub fn context_row(&self, node: u32) -> &[f64] {
        let d = self.layout.dim;
        &self.context[node as usize * d..(node as usize + 1) * d]
    }

    pub fn context_row_mut(&mut self, node: u32) -> &mut [f64] {
        let d = self.layout.dim;
        &mut self.context[node as usize * d..(node as usize + 1) * d]
    }

    pub fn is_finite(&self) -> bool {
        self.dense.iter().chain(&self.context).all(|x| x.is_finite())
    }
}

/// Gradient with the same dense layout plus sparsely touched context rows.
#[derive(Debug, Clone)]
pub struct Grads {
    pub dense: Vec<f64>,
    dim: usize,
    slots: HashMap<u32, usize>,
    order: Vec<u32>,
    rows: Vec<f64>,
}

impl Grads {
    pub fn zeros(layout: &Layout) -> Self {
        Self {
            dense: vec![0.0; layout.total()],
            dim: layout.dim,
            slots: HashMap::new(),
            order: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn context_row_mut(&mut self, node: u32) -> &mut [f64] {
        let d = self.dim;
        let slot = *self.slots.entry(node).or_insert_with(|| {
            self.order.push(node);
            self.rows.extend(std::iter::repeat_n(0.0, d));
            self.order.len() - 1
        });
        &mut self.rows[slot * d..(slot + 1) * d]
    }

    pub fn context_row(&self, node: u32) -> Option<&[f64]> {
        let d = self.dim;
        self.slots.get(&node).map(|&s| &self.rows[s * d..(s + 1) * d])
    }

    /// Context rows in first-touch order.
    pub fn touched_context(&self) -> &[u32] {
        &self.order
    }

    pub fn absorb(&mut self, other: &Grads) {
        for (a, b) in self.dense.iter_mut().zip(&other.dense) {
            *a += b;
        }
        for &node in &other.order {
            let src = other.context_row(node).unwrap();
            let d = self.dim;
            let slot = *self.slots.entry(node).or_insert_with(|| {
                self.order.push(node);
                self.rows.extend(std::iter::repeat_n(0.0, d));
                self.order.len() - 1
            });
            for (a, b) in self.rows[slot * d..(slot + 1) * d].iter_mut().zip(src) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.dense.iter_mut().chain(self.rows.iter_mut()).for_each(|x| *x *= c);
    }
}

/// `out = A x` for row-major `A` of shape `rows x cols`.
pub(crate) fn matvec(a: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for (o, row) in out.iter_mut().zip(a.chunks_exact(cols)) {
        *o = row.iter().zip(x).map(|(p, q)| p * q).sum();
    }
}

/// `out += A^T y` for row-major `A` of shape `rows x cols`.
pub(crate) fn matvec_t_add(a: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(y.len(), rows);
    debug_assert_eq!(out.len(), cols);
    for (row, &yi) in a.chunks_exact(cols).zip(y) {
        if yi == 0.0 {
            continue;
        }
        for (o, p) in out.iter_mut().zip(row) {
            *o += p * yi;
        }
    }
}

/// `g += scale * u v^T` for `g` of shape `u.len() x v.len()`.
pub(crate) fn outer_add(g: &mut [f64], u: &[f64], v: &[f64], scale: f64) {
    debug_assert_eq!(g.len(), u.len() * v.len());
    for (row, &ui) in g.chunks_exact_mut(v.len()).zip(u) {
        let c = scale * ui;
        if c == 0.0 {
            continue;
        }
        for (gi, vj) in row.iter_mut().zip(v) {
            *gi += c * vj;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
