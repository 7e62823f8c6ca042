use serde::{Deserialize, Serialize};

use super::GatneError;
use crate::ingest::EdgeType;

/// Activation applied after each neighbor-aggregation level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatneConfig {
    /// Overall embedding dimension.
    pub dim: usize,
    /// Base embedding dimension; must match the imported base matrix.
    pub base_dim: usize,
    /// Edge embedding dimension.
    pub edge_dim: usize,
    /// Attention hidden dimension.
    pub att_dim: usize,
    pub edge_type_count: usize,
    /// Sampled neighbors per aggregation level; its length is the number of levels.
    pub neighbor_samples: Vec<usize>,
    pub negatives: usize,
    pub window: usize,
    pub walk_length: usize,
    pub num_walks: usize,
    /// Per edge type weight of the attended edge embedding.
    pub alpha: Vec<f64>,
    /// Per edge type weight of the linear base-embedding term.
    pub beta: Vec<f64>,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop once the relative change of the epoch loss drops below this.
    pub early_stop_tol: f64,
    pub activation: Activation,
    /// Number of affine layers in the shared-embedding transform (tanh between layers).
    pub shared_depth: usize,
    pub seed: u64,
}

impl Default for GatneConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            base_dim: 128,
            edge_dim: 10,
            att_dim: 20,
            edge_type_count: 2,
            neighbor_samples: vec![5],
            negatives: 4,
            window: 3,
            walk_length: 5,
            num_walks: 5,
            alpha: vec![0.5, 0.5],
            beta: vec![0.5, 0.5],
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 64,
            epochs: 10,
            early_stop_tol: 1e-4,
            activation: Activation::Identity,
            shared_depth: 1,
            seed: 0,
        }
    }
}

impl GatneConfig {
    pub fn levels(&self) -> usize {
        self.neighbor_samples.len()
    }

    pub fn validate(&self) -> Result<(), GatneError> {
        let bad = |m: String| Err(GatneError::InvalidConfig(m));
        if self.dim == 0 || self.base_dim == 0 || self.edge_dim == 0 || self.att_dim == 0 {
            return bad("all dimensions must be positive".into());
        }
        if self.edge_type_count != EdgeType::ALL.len() {
            return bad(format!("edge_type_count must be {}", EdgeType::ALL.len()));
        }
        if self.neighbor_samples.is_empty() || self.neighbor_samples.contains(&0) {
            return bad("neighbor_samples needs at least one positive entry".into());
        }
        if self.window == 0 || self.walk_length == 0 || self.batch_size == 0 || self.shared_depth == 0 {
            return bad("window, walk_length, batch_size and shared_depth must be positive".into());
        }
        if self.alpha.len() != self.edge_type_count || self.beta.len() != self.edge_type_count {
            return bad("alpha and beta need one entry per edge type".into());
        }
        if self.alpha.iter().chain(&self.beta).any(|c| !(*c >= 0.0)) {
            return bad("alpha and beta must be non-negative".into());
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning_rate must be non-negative".into());
        }
        Ok(())
    }
}
