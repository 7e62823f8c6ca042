//! Skip-gram training over materialized walk pairs with Adam.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;

use super::model::{export_embeddings, sample_tree, skipgram_loss_grad, BaseEmbeddings, PairSample};
use super::params::{GatneParams, Grads};
use super::walks::{generate_walks, pairs_from_walks, TrainingPair, Walk};
use super::{GatneConfig, GatneError};
use crate::ingest::{EdgeType, MultiplexGraph};
use crate::matrix::EmbeddingMatrix;
use crate::par::{self, ThreadMode};
use crate::seed;

/// Walks for every edge type and the pairs extracted from them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub walks: Vec<Walk>,
    pub pairs: Vec<TrainingPair>,
}

pub fn build_corpus(graph: &MultiplexGraph, config: &GatneConfig, mode: ThreadMode) -> Corpus {
    let walks: Vec<Walk> = EdgeType::ALL
        .iter()
        .flat_map(|&r| generate_walks(graph, r, config.walk_length, config.num_walks, config.seed, mode))
        .collect();
    let pairs = pairs_from_walks(&walks, config.window);
    Corpus { walks, pairs }
}

/// Reorders the base matrix rows into graph node order.
pub fn align_base(graph: &MultiplexGraph, base: &EmbeddingMatrix) -> Result<BaseEmbeddings, GatneError> {
    let mut data = Vec::with_capacity(graph.node_count() * base.dim());
    for id in graph.nodes() {
        let row = base.row_by_id(id).ok_or_else(|| GatneError::MissingBase(id.clone()))?;
        data.extend(row.iter().map(|&x| f64::from(x)));
    }
    Ok(BaseEmbeddings::new(base.dim(), data))
}

/// Unigram counts over the walk corpus raised to the 3/4 power.
pub fn noise_weights(walks: &[Walk], node_count: usize) -> Vec<f64> {
    let mut counts = vec![0u64; node_count];
    for w in walks {
        for &n in &w.nodes {
            counts[n as usize] += 1;
        }
    }
    counts.into_iter().map(|c| (c as f64).powf(0.75)).collect()
}

struct Adam {
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
    cm: Vec<f64>,
    cv: Vec<f64>,
}

impl Adam {
    fn new(config: &GatneConfig, params: &GatneParams) -> Self {
        Self {
            lr: config.learning_rate,
            b1: config.adam_beta1,
            b2: config.adam_beta2,
            eps: config.adam_eps,
            t: 0,
            m: vec![0.0; params.dense.len()],
            v: vec![0.0; params.dense.len()],
            cm: vec![0.0; params.context.len()],
            cv: vec![0.0; params.context.len()],
        }
    }

    /// Dense Adam on shared parameters; lazy Adam (moments touched only for
    /// rows with gradient) on context vectors.
    fn step(&mut self, params: &mut GatneParams, grads: &Grads) {
        self.t += 1;
        let lr_t = self.lr * (1.0 - self.b2.powi(self.t)).sqrt() / (1.0 - self.b1.powi(self.t));
        let (b1, b2, eps) = (self.b1, self.b2, self.eps);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr_t * *m / (v.sqrt() + eps);
        };
        for i in 0..params.dense.len() {
            update(&mut params.dense[i], grads.dense[i], &mut self.m[i], &mut self.v[i]);
        }
        let d = params.layout.dim;
        let mut touched = grads.touched_context().to_vec();
        touched.sort_unstable();
        for node in touched {
            let g = grads.context_row(node).unwrap();
            let base = node as usize * d;
            for k in 0..d {
                let i = base + k;
                update(&mut params.context[i], g[k], &mut self.cm[i], &mut self.cv[i]);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GatneTraining {
    pub params: GatneParams,
    pub base: BaseEmbeddings,
    /// Mean per-pair loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
    /// Pairs dropped because center and context were the same node.
    pub self_pairs_skipped: usize,
    /// One matrix per edge type, in [`EdgeType::ALL`] order, rows keyed by node id.
    pub embeddings: Vec<(EdgeType, EmbeddingMatrix)>,
}

impl GatneTraining {
    pub fn embedding(&self, r: EdgeType) -> &EmbeddingMatrix {
        &self.embeddings[r.index()].1
    }
}

const GRAD_CHUNK: usize = 16;
const NEGATIVE_RETRIES: usize = 64;

pub fn train_gatne(
    graph: &MultiplexGraph,
    base: &EmbeddingMatrix,
    config: &GatneConfig,
    mode: ThreadMode,
) -> Result<GatneTraining, GatneError> {
    let corpus = build_corpus(graph, config, mode);
    train_with_corpus(graph, base, &corpus, config, mode)
}

pub fn train_with_corpus(
    graph: &MultiplexGraph,
    base_matrix: &EmbeddingMatrix,
    corpus: &Corpus,
    config: &GatneConfig,
    mode: ThreadMode,
) -> Result<GatneTraining, GatneError> {
    config.validate()?;
    if base_matrix.dim() != config.base_dim {
        return Err(GatneError::BaseDim { expected: config.base_dim, found: base_matrix.dim() });
    }
    let base = align_base(graph, base_matrix)?;
    let n = graph.node_count();
    let mut params = GatneParams::init(config, n);

    let pairs: Vec<TrainingPair> = corpus.pairs.iter().copied().filter(|p| p.center != p.context).collect();
    let self_pairs_skipped = corpus.pairs.len() - pairs.len();
    let noise = noise_weights(&corpus.walks, n);
    let sampler = WeightedIndex::new(&noise).ok();

    let mut adam = Adam::new(config, &params);
    let mut epoch_losses = Vec::new();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let fanouts = config.neighbor_samples.clone();

    if let Some(sampler) = sampler.filter(|_| !pairs.is_empty()) {
        for epoch in 0..config.epochs {
            order.shuffle(&mut seed::rng(config.seed, &[seed::label("pair-shuffle"), epoch as u64]));
            let mut total = 0.0;
            for (b, batch) in order.chunks(config.batch_size).enumerate() {
                let weight = 1.0 / batch.len() as f64;
                let positions: Vec<(usize, usize)> =
                    batch.iter().enumerate().map(|(k, &i)| (b * config.batch_size + k, i)).collect();
                let parts = par::map_chunks(mode, &positions, GRAD_CHUNK, |chunk| {
                    let mut grads = Grads::zeros(&params.layout);
                    let mut loss = 0.0;
                    for &(pos, i) in chunk {
                        let pair = pairs[i];
                        let mut rng =
                            seed::rng(config.seed, &[seed::label("pair-sample"), epoch as u64, pos as u64]);
                        let trees = EdgeType::ALL
                            .iter()
                            .map(|&c| sample_tree(graph, c, pair.center, &fanouts, &mut rng))
                            .collect();
                        let negatives = (0..config.negatives)
                            .map(|_| {
                                let mut cand = sampler.sample(&mut rng) as u32;
                                for _ in 0..NEGATIVE_RETRIES {
                                    if cand != pair.context {
                                        break;
                                    }
                                    cand = sampler.sample(&mut rng) as u32;
                                }
                                cand
                            })
                            .collect();
                        let sample = PairSample {
                            center: pair.center,
                            context: pair.context,
                            edge_type: pair.edge_type,
                            negatives,
                            trees,
                        };
                        loss += skipgram_loss_grad(&params, &base, config, &sample, weight, &mut grads);
                    }
                    (loss, grads)
                });
                let mut grads = Grads::zeros(&params.layout);
                for (l, g) in &parts {
                    total += l;
                    grads.absorb(g);
                }
                if config.learning_rate > 0.0 {
                    adam.step(&mut params, &grads);
                }
            }
            if !params.is_finite() {
                return Err(GatneError::NonFinite { epoch });
            }
            let mean = total / pairs.len() as f64;
            log::debug!("gatne epoch {epoch}: loss {mean:.6}");
            let converged = epoch_losses
                .last()
                .is_some_and(|&prev: &f64| ((prev - mean) / prev).abs() < config.early_stop_tol);
            epoch_losses.push(mean);
            if converged {
                log::info!("gatne converged after {} epochs", epoch + 1);
                break;
            }
        }
    }

    let embeddings = EdgeType::ALL
        .iter()
        .map(|&r| {
            let data = export_embeddings(&params, &base, config, graph, r, mode);
            let m = EmbeddingMatrix::from_f64_rows(graph.nodes().to_vec(), config.dim, &data)?;
            Ok((r, m))
        })
        .collect::<Result<Vec<_>, GatneError>>()?;

    Ok(GatneTraining { params, base, epoch_losses, self_pairs_skipped, embeddings })
}
