//! Exact flat L2 index over aspect-bearing items.
//!
//! Relevance of a hit is `1 / (1 + d²)` where `d²` is the squared Euclidean
//! distance, so identical vectors score 1 and scores fall strictly with
//! distance. Ties in distance are broken by ascending item id.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{EmbeddingMatrix, MatrixError};
use crate::par::{self, ThreadMode};

pub const DEFAULT_RECALL_SIZE: usize = 50;

#[derive(Debug, Error)]
pub enum RecallError {
    #[error("item {0:?} has no embedding row")]
    MissingRow(String),
    #[error("cannot build an index over an empty item set")]
    EmptyIndex,
    #[error("query dim {found} does not match index dim {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallSet {
    pub anchor: String,
    #[serde(rename = "items")]
    pub entries: Vec<(String, f64)>,
}

impl RecallSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn ann_rel(squared_distance: f64) -> f64 {
    1.0 / (1.0 + squared_distance)
}

pub fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

fn normalized(v: &[f32]) -> Vec<f32> {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|&x| (f64::from(x) / norm) as f32).collect()
}

#[derive(Debug, Clone)]
pub struct FlatIndex {
    rows: EmbeddingMatrix,
    normalize: bool,
}

impl FlatIndex {
    /// Indexes exactly the rows of `items`, in ascending id order.
    pub fn build(embeddings: &EmbeddingMatrix, items: &BTreeSet<String>, normalize: bool) -> Result<Self, RecallError> {
        if items.is_empty() {
            return Err(RecallError::EmptyIndex);
        }
        let mut data = Vec::with_capacity(items.len() * embeddings.dim());
        for id in items {
            let row = embeddings.row_by_id(id).ok_or_else(|| RecallError::MissingRow(id.clone()))?;
            if normalize {
                data.extend(normalized(row));
            } else {
                data.extend_from_slice(row);
            }
        }
        let rows = EmbeddingMatrix::new(items.iter().cloned().collect(), embeddings.dim(), data)?;
        Ok(Self { rows, normalize })
    }

    /// Wraps an already prepared matrix, e.g. one loaded from disk.
    pub fn from_matrix(rows: EmbeddingMatrix, normalize: bool) -> Result<Self, RecallError> {
        if rows.rows() == 0 {
            return Err(RecallError::EmptyIndex);
        }
        Ok(Self { rows, normalize })
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.dim()
    }

    /// The `p` nearest rows to `vector`, skipping `exclude` if given.
    pub fn query(&self, vector: &[f32], p: usize, exclude: Option<&str>) -> Result<Vec<(String, f64)>, RecallError> {
        if vector.len() != self.dim() {
            return Err(RecallError::DimMismatch { expected: self.dim(), found: vector.len() });
        }
        let q = if self.normalize { normalized(vector) } else { vector.to_vec() };
        let ids = self.rows.ids();
        let mut hits: Vec<(f64, usize)> = (0..self.len())
            .filter(|&i| exclude != Some(ids[i].as_str()))
            .map(|i| (squared_l2(&q, self.rows.row(i)), i))
            .collect();
        // rows are stored in ascending id order, so index order is id order
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if p < hits.len() {
            if p == 0 {
                return Ok(Vec::new());
            }
            hits.select_nth_unstable_by(p - 1, cmp);
            hits.truncate(p);
        }
        hits.sort_unstable_by(cmp);
        Ok(hits.into_iter().map(|(d, i)| (ids[i].clone(), ann_rel(d))).collect())
    }

    /// Recall set for an anchor whose vector lives in `embeddings`.
    pub fn query_anchor(&self, embeddings: &EmbeddingMatrix, anchor: &str, p: usize) -> Result<RecallSet, RecallError> {
        let v = embeddings.row_by_id(anchor).ok_or_else(|| RecallError::MissingRow(anchor.to_string()))?;
        Ok(RecallSet { anchor: anchor.to_string(), entries: self.query(v, p, Some(anchor))? })
    }

    pub fn query_batch(
        &self,
        embeddings: &EmbeddingMatrix,
        anchors: &[String],
        p: usize,
        mode: ThreadMode,
    ) -> Result<Vec<RecallSet>, RecallError> {
        par::map_slice(mode, anchors, |a| self.query_anchor(embeddings, a, p)).into_iter().collect()
    }
}
