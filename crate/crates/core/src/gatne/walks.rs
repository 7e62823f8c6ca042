//! Uniform random walks per edge type and skip-gram pair extraction.
//!
//! Walks are materialized once before training. Each walk's random stream is
//! derived from `(seed, edge type, start node, walk index)`, so the corpus is
//! identical whether generated sequentially or in parallel.
//!
//! Artifact layouts (little-endian):
//!
//! ```text
//! walks:  "DTSW" | u16 version | u64 seed | u64 count | count x (u8 edge type, u32 len, len x u32 node)
//! pairs:  "DTSP" | u16 version | u64 seed | u32 window | u64 count | count x (u32 center, u32 context, u8 edge type)
//! ```

use rand::Rng;

use crate::ingest::{ByteReader, EdgeType, IngestError, MultiplexGraph};
use crate::par::{self, ThreadMode};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Walk {
    pub edge_type: EdgeType,
    pub nodes: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrainingPair {
    pub center: u32,
    pub context: u32,
    pub edge_type: EdgeType,
}

/// `num_walks` walks of up to `length` nodes from every node that has at
/// least one `r`-neighbor. Each step moves to a uniformly chosen neighbor.
pub fn generate_walks(
    graph: &MultiplexGraph,
    r: EdgeType,
    length: usize,
    num_walks: usize,
    seed: u64,
    mode: ThreadMode,
) -> Vec<Walk> {
    let per_node = par::map_range(mode, graph.node_count(), |start| {
        let start = start as u32;
        if graph.neighbors(r, start).is_empty() || length == 0 {
            return Vec::new();
        }
        (0..num_walks)
            .map(|w| {
                let mut rng =
                    seed::rng(seed, &[seed::label("walk"), r.index() as u64, u64::from(start), w as u64]);
                let mut nodes = Vec::with_capacity(length);
                nodes.push(start);
                let mut cur = start;
                while nodes.len() < length {
                    let nbrs = graph.neighbors(r, cur);
                    if nbrs.is_empty() {
                        break;
                    }
                    cur = nbrs[rng.random_range(0..nbrs.len())];
                    nodes.push(cur);
                }
                Walk { edge_type: r, nodes }
            })
            .collect()
    });
    per_node.into_iter().flatten().collect()
}

/// Ordered pairs `(node_p, node_q)` for every pair of walk positions with
/// `0 < |p - q| <= window`. Positions, not node ids, must differ: a walk that
/// revisits a node yields pairs whose center equals the context.
pub fn pairs_from_walks(walks: &[Walk], window: usize) -> Vec<TrainingPair> {
    let mut out = Vec::with_capacity(walks.iter().map(|w| pair_count(w.nodes.len(), window)).sum());
    for walk in walks {
        let n = walk.nodes.len();
        for p in 0..n {
            let lo = p.saturating_sub(window);
            let hi = (p + window).min(n - 1);
            for q in lo..=hi {
                if q != p {
                    out.push(TrainingPair {
                        center: walk.nodes[p],
                        context: walk.nodes[q],
                        edge_type: walk.edge_type,
                    });
                }
            }
        }
    }
    out
}

/// Number of ordered position pairs in a walk of `len` nodes.
pub fn pair_count(len: usize, window: usize) -> usize {
    (0..len).map(|p| p.min(window) + (len - 1 - p).min(window)).sum()
}

const WALK_MAGIC: &[u8; 4] = b"DTSW";
const PAIR_MAGIC: &[u8; 4] = b"DTSP";
const ARTIFACT_VERSION: u16 = 1;

pub fn walks_to_bytes(walks: &[Walk], seed: u64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WALK_MAGIC);
    out.extend_from_slice(&ARTIFACT_VERSION.to_le_bytes());
    out.extend_from_slice(&seed.to_le_bytes());
    out.extend_from_slice(&(walks.len() as u64).to_le_bytes());
    for w in walks {
        out.push(w.edge_type.index() as u8);
        out.extend_from_slice(&(w.nodes.len() as u32).to_le_bytes());
        for n in &w.nodes {
            out.extend_from_slice(&n.to_le_bytes());
        }
    }
    out
}

fn header(r: &mut ByteReader<'_>, magic: &[u8; 4]) -> Result<u64, IngestError> {
    if r.take(4)? != magic {
        return Err(IngestError::Format("bad artifact magic".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != ARTIFACT_VERSION {
        return Err(IngestError::Format(format!("unsupported artifact version {version}")));
    }
    r.u64()
}

fn edge_type(byte: u8) -> Result<EdgeType, IngestError> {
    EdgeType::from_index(byte as usize).ok_or_else(|| IngestError::Format(format!("bad edge type {byte}")))
}

/// Returns the walks and the seed recorded with them.
pub fn walks_from_bytes(bytes: &[u8]) -> Result<(Vec<Walk>, u64), IngestError> {
    let mut r = ByteReader { bytes, pos: 0 };
    let seed = header(&mut r, WALK_MAGIC)?;
    let count = r.u64()?;
    let mut walks = Vec::new();
    for _ in 0..count {
        let et = edge_type(r.take(1)?[0])?;
        let len = r.u32()?;
        let nodes = (0..len).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        walks.push(Walk { edge_type: et, nodes });
    }
    if r.pos != bytes.len() {
        return Err(IngestError::Format("trailing bytes after walks".into()));
    }
    Ok((walks, seed))
}

pub fn pairs_to_bytes(pairs: &[TrainingPair], seed: u64, window: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(26 + pairs.len() * 9);
    out.extend_from_slice(PAIR_MAGIC);
    out.extend_from_slice(&ARTIFACT_VERSION.to_le_bytes());
    out.extend_from_slice(&seed.to_le_bytes());
    out.extend_from_slice(&(window as u32).to_le_bytes());
    out.extend_from_slice(&(pairs.len() as u64).to_le_bytes());
    for p in pairs {
        out.extend_from_slice(&p.center.to_le_bytes());
        out.extend_from_slice(&p.context.to_le_bytes());
        out.push(p.edge_type.index() as u8);
    }
    out
}

/// Returns the pairs, the recorded seed and the window.
pub fn pairs_from_bytes(bytes: &[u8]) -> Result<(Vec<TrainingPair>, u64, usize), IngestError> {
    let mut r = ByteReader { bytes, pos: 0 };
    let seed = header(&mut r, PAIR_MAGIC)?;
    let window = r.u32()? as usize;
    let count = r.u64()?;
    let mut pairs = Vec::new();
    for _ in 0..count {
        let (center, context) = (r.u32()?, r.u32()?);
        let et = edge_type(r.take(1)?[0])?;
        pairs.push(TrainingPair { center, context, edge_type: et });
    }
    if r.pos != bytes.len() {
        return Err(IngestError::Format("trailing bytes after pairs".into()));
    }
    Ok((pairs, seed, window))
}
