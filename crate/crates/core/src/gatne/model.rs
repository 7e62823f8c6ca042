//! Forward and backward passes for one node and one edge type.
//!
//! Edge embedding (per level `k`, mean aggregator):
//! `u^k_i = act(W_agg^k * mean(u^{k-1}_j for sampled neighbors j))`, with
//! `u^0_j = G_r x_j + b_r`. A node without neighbors keeps `u^0`.
//!
//! Attention over the `m` edge embeddings of node `i`:
//! `a_{i,r} = softmax_c(w_r . tanh(W_r u_{i,c}))`.
//!
//! Overall embedding: `v_{i,r} = h(x_i) + alpha_r M_r^T U_i a_{i,r} + beta_r D^T x_i`.

use rand::seq::index;
use rand::Rng;

use super::params::{dot, matvec, matvec_t_add, outer_add, GatneParams, Grads, ParamClass};
use super::{Activation, GatneConfig};
use crate::ingest::{EdgeType, MultiplexGraph};

/// Frozen base embeddings in graph node order.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseEmbeddings {
    dim: usize,
    data: Vec<f64>,
}

impl BaseEmbeddings {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len() % dim, 0, "base data is not a whole number of rows");
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, node: u32) -> &[f64] {
        &self.data[node as usize * self.dim..(node as usize + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Sampled computation tree for one node's edge embedding. The root sits at
/// level `K`; each child is one level lower. A node at level > 0 with no
/// children falls back to its initial edge embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborTree {
    pub node: u32,
    pub children: Vec<NeighborTree>,
}

impl NeighborTree {
    pub fn leaf(node: u32) -> Self {
        Self { node, children: Vec::new() }
    }

    /// Builds a tree where every level uses the given neighbor list of each node.
    pub fn full(graph: &MultiplexGraph, r: EdgeType, node: u32, levels: usize) -> Self {
        if levels == 0 {
            return Self::leaf(node);
        }
        let children = graph.neighbors(r, node).iter().map(|&j| Self::full(graph, r, j, levels - 1)).collect();
        Self { node, children }
    }
}

/// Samples `fanouts[level-1]` neighbors at each level, without replacement
/// when the neighborhood is large enough and with replacement otherwise.
pub fn sample_tree<R: Rng>(graph: &MultiplexGraph, r: EdgeType, node: u32, fanouts: &[usize], rng: &mut R) -> NeighborTree {
    let Some((&fanout, lower)) = fanouts.split_last() else {
        return NeighborTree::leaf(node);
    };
    let nbrs = graph.neighbors(r, node);
    let picks: Vec<u32> = if nbrs.is_empty() {
        Vec::new()
    } else if nbrs.len() >= fanout {
        index::sample(rng, nbrs.len(), fanout).into_iter().map(|i| nbrs[i]).collect()
    } else {
        (0..fanout).map(|_| nbrs[rng.random_range(0..nbrs.len())]).collect()
    };
    let children = picks.into_iter().map(|j| sample_tree(graph, r, j, lower, rng)).collect();
    NeighborTree { node, children }
}

#[derive(Debug, Clone)]
enum EdgeTrace {
    Leaf { node: u32, u: Vec<f64> },
    Agg { level: usize, mean: Vec<f64>, pre: Vec<f64>, u: Vec<f64>, children: Vec<EdgeTrace> },
}

impl EdgeTrace {
    fn u(&self) -> &[f64] {
        match self {
            EdgeTrace::Leaf { u, .. } | EdgeTrace::Agg { u, .. } => u,
        }
    }
}

fn initial_edge(params: &GatneParams, base: &BaseEmbeddings, r: usize, node: u32) -> Vec<f64> {
    let l = &params.layout;
    let mut u = params.block(ParamClass::EdgeInitBias, r).to_vec();
    let mut wx = vec![0.0; l.edge_dim];
    matvec(params.block(ParamClass::EdgeInitWeight, r), l.edge_dim, l.base_dim, base.row(node), &mut wx);
    u.iter_mut().zip(&wx).for_each(|(a, b)| *a += b);
    u
}

fn edge_forward(
    params: &GatneParams,
    base: &BaseEmbeddings,
    act: Activation,
    r: usize,
    tree: &NeighborTree,
    level: usize,
) -> EdgeTrace {
    if level == 0 || tree.children.is_empty() {
        return EdgeTrace::Leaf { node: tree.node, u: initial_edge(params, base, r, tree.node) };
    }
    let s = params.layout.edge_dim;
    let children: Vec<EdgeTrace> =
        tree.children.iter().map(|c| edge_forward(params, base, act, r, c, level - 1)).collect();
    let mut mean = vec![0.0; s];
    for c in &children {
        mean.iter_mut().zip(c.u()).for_each(|(m, x)| *m += x);
    }
    let inv = 1.0 / children.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    let mut pre = vec![0.0; s];
    matvec(params.block(ParamClass::Aggregation, level - 1), s, s, &mean, &mut pre);
    let u = pre.iter().map(|&x| act.apply(x)).collect();
    EdgeTrace::Agg { level, mean, pre, u, children }
}

fn edge_backward(
    params: &GatneParams,
    base: &BaseEmbeddings,
    act: Activation,
    r: usize,
    trace: &EdgeTrace,
    du: &[f64],
    grads: &mut Grads,
) {
    let l = &params.layout;
    match trace {
        EdgeTrace::Leaf { node, .. } => {
            let wr = l.range(ParamClass::EdgeInitWeight, r);
            outer_add(&mut grads.dense[wr], du, base.row(*node), 1.0);
            let br = l.range(ParamClass::EdgeInitBias, r);
            grads.dense[br].iter_mut().zip(du).for_each(|(g, d)| *g += d);
        }
        EdgeTrace::Agg { level, mean, pre, u, children } => {
            let s = l.edge_dim;
            let dpre: Vec<f64> =
                du.iter().zip(pre).zip(u).map(|((d, &x), &y)| d * act.derivative(x, y)).collect();
            let ar = l.range(ParamClass::Aggregation, level - 1);
            outer_add(&mut grads.dense[ar.clone()], &dpre, mean, 1.0);
            let mut dmean = vec![0.0; s];
            matvec_t_add(&params.dense[ar], s, s, &dpre, &mut dmean);
            let inv = 1.0 / children.len() as f64;
            dmean.iter_mut().for_each(|x| *x *= inv);
            for c in children {
                edge_backward(params, base, act, r, c, &dmean, grads);
            }
        }
    }
}

/// Edge embedding `u_{i,r}` for the tree's root node.
pub fn edge_embedding(
    params: &GatneParams,
    base: &BaseEmbeddings,
    act: Activation,
    r: EdgeType,
    tree: &NeighborTree,
) -> Vec<f64> {
    match edge_forward(params, base, act, r.index(), tree, params.layout.levels) {
        EdgeTrace::Leaf { u, .. } | EdgeTrace::Agg { u, .. } => u,
    }
}

#[derive(Debug, Clone)]
struct AttentionTrace {
    z: Vec<Vec<f64>>,
    a: Vec<f64>,
}

fn attention_forward(params: &GatneParams, r: usize, columns: &[&[f64]]) -> AttentionTrace {
    let l = &params.layout;
    let w_mat = params.block(ParamClass::AttentionMatrix, r);
    let w_vec = params.block(ParamClass::AttentionVector, r);
    let mut z = Vec::with_capacity(columns.len());
    let mut logits = Vec::with_capacity(columns.len());
    for u in columns {
        let mut p = vec![0.0; l.att_dim];
        matvec(w_mat, l.att_dim, l.edge_dim, u, &mut p);
        p.iter_mut().for_each(|x| *x = x.tanh());
        logits.push(dot(w_vec, &p));
        z.push(p);
    }
    AttentionTrace { z, a: softmax(&logits) }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Attention coefficients over the columns of `U_i` (one edge embedding per
/// edge type) for target edge type `r`.
pub fn attention_coefficients(params: &GatneParams, r: EdgeType, columns: &[Vec<f64>]) -> Vec<f64> {
    let cols: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
    attention_forward(params, r.index(), &cols).a
}

#[derive(Debug, Clone)]
struct OverallTrace {
    edges: Vec<EdgeTrace>,
    att: AttentionTrace,
    agg: Vec<f64>,
    /// Inputs to each shared layer followed by the shared output.
    shared: Vec<Vec<f64>>,
    v: Vec<f64>,
}

fn shared_forward(params: &GatneParams, x: &[f64]) -> Vec<Vec<f64>> {
    let l = &params.layout;
    let mut acts = vec![x.to_vec()];
    for layer in 0..l.shared_depth {
        let input = acts.last().unwrap();
        let mut out = params.block(ParamClass::SharedBias, layer).to_vec();
        let mut wx = vec![0.0; l.dim];
        matvec(params.block(ParamClass::SharedWeight, layer), l.dim, l.shared_fan_in(layer), input, &mut wx);
        out.iter_mut().zip(&wx).for_each(|(o, w)| *o += w);
        if layer + 1 < l.shared_depth {
            out.iter_mut().for_each(|o| *o = o.tanh());
        }
        acts.push(out);
    }
    acts
}

/// Assembles the overall embedding from precomputed edge embeddings (one per
/// edge type), returning the pieces needed for backprop.
fn combine(
    params: &GatneParams,
    base: &BaseEmbeddings,
    config: &GatneConfig,
    node: u32,
    r: usize,
    edges: Vec<EdgeTrace>,
) -> OverallTrace {
    let l = &params.layout;
    let x = base.row(node);
    let cols: Vec<&[f64]> = edges.iter().map(EdgeTrace::u).collect();
    let att = attention_forward(params, r, &cols);
    let mut agg = vec![0.0; l.edge_dim];
    for (u, &a) in cols.iter().zip(&att.a) {
        agg.iter_mut().zip(*u).for_each(|(g, ui)| *g += a * ui);
    }
    let shared = shared_forward(params, x);
    let mut v = shared.last().unwrap().clone();
    let mut proj = vec![0.0; l.dim];
    matvec_t_add(params.block(ParamClass::EdgeProjection, r), l.edge_dim, l.dim, &agg, &mut proj);
    let mut lin = vec![0.0; l.dim];
    matvec_t_add(params.block(ParamClass::BaseProjection, 0), l.base_dim, l.dim, x, &mut lin);
    let (alpha, beta) = (config.alpha[r], config.beta[r]);
    for ((vi, p), q) in v.iter_mut().zip(&proj).zip(&lin) {
        *vi += alpha * p + beta * q;
    }
    OverallTrace { edges, att, agg, shared, v }
}

fn overall_forward(
    params: &GatneParams,
    base: &BaseEmbeddings,
    config: &GatneConfig,
    node: u32,
    r: usize,
    trees: &[NeighborTree],
) -> OverallTrace {
    let levels = params.layout.levels;
    let edges = trees
        .iter()
        .enumerate()
        .map(|(c, t)| {
            debug_assert_eq!(t.node, node);
            edge_forward(params, base, config.activation, c, t, levels)
        })
        .collect();
    combine(params, base, config, node, r, edges)
}

/// Overall embedding `v_{i,r}`; `trees` holds one sampled tree per edge type,
/// all rooted at `node`.
pub fn overall_embedding(
    params: &GatneParams,
    base: &BaseEmbeddings,
    config: &GatneConfig,
    node: u32,
    r: EdgeType,
    trees: &[NeighborTree],
) -> Vec<f64> {
    assert_eq!(trees.len(), params.layout.edge_types, "one neighbor tree per edge type");
    overall_forward(params, base, config, node, r.index(), trees).v
}

/// Overall embedding from already computed edge embeddings `U_i`.
pub fn overall_from_edges(
    params: &GatneParams,
    base: &BaseEmbeddings,
    config: &GatneConfig,
    node: u32,
    r: EdgeType,
    columns: &[Vec<f64>],
) -> Vec<f64> {
    let edges = columns.iter().map(|u| EdgeTrace::Leaf { node, u: u.clone() }).collect();
    combine(params, base, config, node, r.index(), edges).v
}

fn overall_backward(
    params: &GatneParams,
    base: &BaseEmbeddings,
    config: &GatneConfig,
    node: u32,
    r: usize,
    trace: &OverallTrace,
    gv: &[f64],
    grads: &mut Grads,
) {
    let l = &params.layout;
    let x = base.row(node);
    let (alpha, beta) = (config.alpha[r], config.beta[r]);

    // beta D^T x
    let dr = l.range(ParamClass::BaseProjection, 0);
    outer_add(&mut grads.dense[dr], x, gv, beta);

    // shared MLP
    let mut g = gv.to_vec();
    for layer in (0..l.shared_depth).rev() {
        let input = &trace.shared[layer];
        let wr = l.range(ParamClass::SharedWeight, layer);
        outer_add(&mut grads.dense[wr.clone()], &g, input, 1.0);
        let br = l.range(ParamClass::SharedBias, layer);
        grads.dense[br].iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        if layer > 0 {
            let mut gin = vec![0.0; l.shared_fan_in(layer)];
            matvec_t_add(&params.dense[wr], l.dim, l.shared_fan_in(layer), &g, &mut gin);
            // input of this layer is tanh of the previous layer's pre-activation
            g = gin.iter().zip(input).map(|(d, y)| d * (1.0 - y * y)).collect();
        }
    }

    // alpha M_r^T (U a)
    let mr = l.range(ParamClass::EdgeProjection, r);
    outer_add(&mut grads.dense[mr.clone()], &trace.agg, gv, alpha);
    let mut g_agg = vec![0.0; l.edge_dim];
    matvec(&params.dense[mr], l.edge_dim, l.dim, gv, &mut g_agg);
    g_agg.iter_mut().for_each(|x| *x *= alpha);

    let m = trace.edges.len();
    let a = &trace.att.a;
    let mut du: Vec<Vec<f64>> = trace.edges.iter().map(|e| e.u().iter().map(|_| 0.0).collect()).collect();
    let mut da = vec![0.0; m];
    for c in 0..m {
        da[c] = dot(trace.edges[c].u(), &g_agg);
        du[c].iter_mut().zip(&g_agg).for_each(|(d, gg)| *d += a[c] * gg);
    }
    let weighted: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
    let w_vec = params.block(ParamClass::AttentionVector, r);
    let wv_range = l.range(ParamClass::AttentionVector, r);
    let wm_range = l.range(ParamClass::AttentionMatrix, r);
    for c in 0..m {
        let de = a[c] * (da[c] - weighted);
        if de == 0.0 {
            continue;
        }
        let z = &trace.att.z[c];
        grads.dense[wv_range.clone()].iter_mut().zip(z).for_each(|(g, zi)| *g += de * zi);
        let dp: Vec<f64> = w_vec.iter().zip(z).map(|(w, zi)| de * w * (1.0 - zi * zi)).collect();
        outer_add(&mut grads.dense[wm_range.clone()], &dp, trace.edges[c].u(), 1.0);
        matvec_t_add(&params.dense[wm_range.clone()], l.att_dim, l.edge_dim, &dp, &mut du[c]);
    }

    for (c, edge) in trace.edges.iter().enumerate() {
        edge_backward(params, base, config.activation, c, edge, &du[c], grads);
    }
}

/// One skip-gram sample: a center node under an edge type, its positive
/// context, the sampled negatives, and the neighbor trees for every edge type.
#[derive(Debug, Clone)]
pub struct PairSample {
    pub center: u32,
    pub context: u32,
    pub edge_type: EdgeType,
    pub negatives: Vec<u32>,
    pub trees: Vec<NeighborTree>,
}

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

/// `-ln s(c_j . v) - sum_n ln s(-c_n . v)`.
pub fn skipgram_loss(params: &GatneParams, base: &BaseEmbeddings, config: &GatneConfig, sample: &PairSample) -> f64 {
    let trace = overall_forward(params, base, config, sample.center, sample.edge_type.index(), &sample.trees);
    let mut loss = softplus(-dot(params.context_row(sample.context), &trace.v));
    for &n in &sample.negatives {
        loss += softplus(dot(params.context_row(n), &trace.v));
    }
    loss
}

/// Loss plus `weight * dLoss` accumulated into `grads`. The base embeddings
/// receive no gradient.
pub fn skipgram_loss_grad(
    params: &GatneParams,
    base: &BaseEmbeddings,
    config: &GatneConfig,
    sample: &PairSample,
    weight: f64,
    grads: &mut Grads,
) -> f64 {
    let r = sample.edge_type.index();
    let trace = overall_forward(params, base, config, sample.center, r, &sample.trees);
    let v = &trace.v;
    let mut gv = vec![0.0; v.len()];

    let c_pos = params.context_row(sample.context);
    let s_pos = dot(c_pos, v);
    let mut loss = softplus(-s_pos);
    let coef = weight * (sigmoid(s_pos) - 1.0);
    gv.iter_mut().zip(c_pos).for_each(|(g, c)| *g += coef * c);
    grads.context_row_mut(sample.context).iter_mut().zip(v).for_each(|(g, x)| *g += coef * x);

    for &n in &sample.negatives {
        let c_neg = params.context_row(n);
        let s = dot(c_neg, v);
        loss += softplus(s);
        let coef = weight * sigmoid(s);
        gv.iter_mut().zip(c_neg).for_each(|(g, c)| *g += coef * c);
        grads.context_row_mut(n).iter_mut().zip(v).for_each(|(g, x)| *g += coef * x);
    }

    overall_backward(params, base, config, sample.center, r, &trace, &gv, grads);
    loss
}

/// Overall embeddings of every node for edge type `r`, aggregating over the
/// full neighbor lists instead of samples.
pub fn export_embeddings(
    params: &GatneParams,
    base: &BaseEmbeddings,
    config: &GatneConfig,
    graph: &MultiplexGraph,
    r: EdgeType,
    mode: crate::par::ThreadMode,
) -> Vec<f64> {
    let l = &params.layout;
    let n = graph.node_count();
    let s = l.edge_dim;
    // level-by-level edge embeddings for all nodes and all edge types
    let columns: Vec<Vec<Vec<f64>>> = EdgeType::ALL
        .iter()
        .map(|&c| {
            let initial: Vec<Vec<f64>> =
                crate::par::map_range(mode, n, |i| initial_edge(params, base, c.index(), i as u32));
            let mut current = initial.clone();
            for level in 1..=l.levels {
                let w = params.block(ParamClass::Aggregation, level - 1);
                current = crate::par::map_range(mode, n, |i| {
                    let nbrs = graph.neighbors(c, i as u32);
                    if nbrs.is_empty() {
                        return initial[i].clone();
                    }
                    let mut mean = vec![0.0; s];
                    for &j in nbrs {
                        mean.iter_mut().zip(&current[j as usize]).for_each(|(m, x)| *m += x);
                    }
                    let inv = 1.0 / nbrs.len() as f64;
                    mean.iter_mut().for_each(|m| *m *= inv);
                    let mut pre = vec![0.0; s];
                    matvec(w, s, s, &mean, &mut pre);
                    pre.into_iter().map(|x| config.activation.apply(x)).collect()
                });
            }
            current
        })
        .collect();
    let rows = crate::par::map_range(mode, n, |i| {
        let cols: Vec<Vec<f64>> = columns.iter().map(|per_type| per_type[i].clone()).collect();
        overall_from_edges(params, base, config, i as u32, r, &cols)
    });
    rows.into_iter().flatten().collect()
}
