//! Multiplex graph embeddings: per-edge-type overall node embeddings built
//! from frozen base embeddings, mean-aggregated neighbor edge embeddings and
//! self-attention across edge types, trained with random-walk skip-gram and
//! negative sampling.

mod config;
mod model;
mod params;
mod train;
mod walks;

pub use config::{Activation, GatneConfig};
pub use model::{
    attention_coefficients, edge_embedding, export_embeddings, overall_embedding, overall_from_edges,
    sample_tree, skipgram_loss, skipgram_loss_grad, BaseEmbeddings, NeighborTree, PairSample,
};
pub use params::{GatneParams, Grads, Layout, ParamClass};
pub use train::{align_base, build_corpus, noise_weights, train_gatne, train_with_corpus, Corpus, GatneTraining};
pub use walks::{
    generate_walks, pair_count, pairs_from_bytes, pairs_from_walks, pairs_to_bytes, walks_from_bytes,
    walks_to_bytes, TrainingPair, Walk,
};

use thiserror::Error;

use crate::matrix::MatrixError;

#[derive(Debug, Error)]
pub enum GatneError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("node {0:?} has no base embedding")]
    MissingBase(String),
    #[error("base embedding dim {found} does not match configured {expected}")]
    BaseDim { expected: usize, found: usize },
    #[error("non-finite parameter after epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}
