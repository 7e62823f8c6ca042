//! Multiplex item graph over co-bought and co-add-to-cart edges.
//!
//! Binary artifact layout (`DTSG`, little-endian):
//!
//! ```text
//! magic "DTSG" | u16 version | u64 node_count
//! node_count x (u32 len, id bytes, u32 len, category bytes)      sorted by id
//! for co_bought then co_atc: u64 edge_count, edge_count x (u32 u, u32 v, u32 count)   u < v, sorted
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::records::{AspectAnnotation, CatalogItem, EventKind, SessionEvent};
use super::IngestError;
use crate::par::{self, ThreadMode};

const GRAPH_MAGIC: &[u8; 4] = b"DTSG";
const GRAPH_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeType {
    CoBought,
    CoAtc,
}

impl EdgeType {
    pub const ALL: [EdgeType; 2] = [EdgeType::CoBought, EdgeType::CoAtc];

    pub fn index(self) -> usize {
        match self {
            EdgeType::CoBought => 0,
            EdgeType::CoAtc => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::CoBought => "co_bought",
            EdgeType::CoAtc => "co_atc",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }
}

/// Item graph with two undirected edge types. Node indices follow ascending
/// item id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiplexGraph {
    nodes: Vec<String>,
    categories: Vec<String>,
    index: HashMap<String, u32>,
    /// Per edge type: `(u, v)` with `u < v` mapped to the number of sessions
    /// in which the pair co-occurred.
    edges: [BTreeMap<(u32, u32), u32>; 2],
    adjacency: [Vec<Vec<u32>>; 2],
}

impl MultiplexGraph {
    /// Assembles a graph, enforcing the structural invariants.
    pub fn from_parts(
        nodes: Vec<(String, String)>,
        edges: [BTreeMap<(u32, u32), u32>; 2],
    ) -> Result<Self, IngestError> {
        let mut sorted = nodes;
        sorted.sort();
        let (ids, categories): (Vec<String>, Vec<String>) = sorted.into_iter().unzip();
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i as u32).is_some() {
                return Err(IngestError::Format(format!("duplicate node {id:?}")));
            }
        }
        let n = ids.len();
        let mut adjacency = [vec![Vec::new(); n], vec![Vec::new(); n]];
        for (t, set) in edges.iter().enumerate() {
            for &(u, v) in set.keys() {
                if u >= v || v as usize >= n {
                    return Err(IngestError::Format(format!("invalid edge ({u}, {v})")));
                }
                if categories[u as usize] != categories[v as usize] {
                    return Err(IngestError::Format(format!(
                        "edge ({}, {}) crosses categories",
                        ids[u as usize], ids[v as usize]
                    )));
                }
                adjacency[t][u as usize].push(v);
                adjacency[t][v as usize].push(u);
            }
        }
        for adj in adjacency.iter_mut() {
            for list in adj.iter_mut() {
                list.sort_unstable();
            }
        }
        Ok(Self { nodes: ids, categories, index, edges, adjacency })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_id(&self, idx: u32) -> &str {
        &self.nodes[idx as usize]
    }

    pub fn node_index(&self, id: &str) -> Option<u32> {
        self.index.get(id).copied()
    }

    pub fn category(&self, idx: u32) -> &str {
        &self.categories[idx as usize]
    }

    pub fn neighbors(&self, r: EdgeType, idx: u32) -> &[u32] {
        &self.adjacency[r.index()][idx as usize]
    }

    /// Distinct neighbors across both edge types.
    pub fn degree(&self, idx: u32) -> usize {
        let mut all: BTreeSet<u32> = BTreeSet::new();
        for r in EdgeType::ALL {
            all.extend(self.neighbors(r, idx));
        }
        all.len()
    }

    pub fn edge_count(&self, r: EdgeType) -> usize {
        self.edges[r.index()].len()
    }

    /// Edges of one type as `((u, v), co-occurrence count)` with `u < v`.
    pub fn edges(&self, r: EdgeType) -> impl Iterator<Item = ((u32, u32), u32)> + '_ {
        self.edges[r.index()].iter().map(|(&k, &c)| (k, c))
    }

    /// Same graph with node ids rewritten through `rename`; indices are
    /// reassigned in the new id order.
    pub fn relabeled(&self, rename: impl Fn(&str) -> String) -> Result<Self, IngestError> {
        let new_ids: Vec<String> = self.nodes.iter().map(|s| rename(s)).collect();
        let nodes: Vec<(String, String)> =
            new_ids.iter().cloned().zip(self.categories.iter().cloned()).collect();
        let mut order: Vec<usize> = (0..new_ids.len()).collect();
        order.sort_by(|&a, &b| new_ids[a].cmp(&new_ids[b]));
        let mut new_index = vec![0u32; new_ids.len()];
        for (pos, &old) in order.iter().enumerate() {
            new_index[old] = pos as u32;
        }
        let mut edges: [BTreeMap<(u32, u32), u32>; 2] = Default::default();
        for r in EdgeType::ALL {
            for ((u, v), c) in self.edges(r) {
                let (a, b) = (new_index[u as usize], new_index[v as usize]);
                edges[r.index()].insert((a.min(b), a.max(b)), c);
            }
        }
        Self::from_parts(nodes, edges)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(GRAPH_MAGIC);
        out.extend_from_slice(&GRAPH_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.nodes.len() as u64).to_le_bytes());
        for (id, cat) in self.nodes.iter().zip(&self.categories) {
            put_str(&mut out, id);
            put_str(&mut out, cat);
        }
        for set in &self.edges {
            out.extend_from_slice(&(set.len() as u64).to_le_bytes());
            for (&(u, v), &c) in set {
                out.extend_from_slice(&u.to_le_bytes());
                out.extend_from_slice(&v.to_le_bytes());
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IngestError> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != GRAPH_MAGIC {
            return Err(IngestError::Format("bad graph magic".into()));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != GRAPH_VERSION {
            return Err(IngestError::Format(format!("unsupported graph version {version}")));
        }
        let n = r.u64()? as usize;
        let mut nodes = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let id = r.string()?;
            let cat = r.string()?;
            nodes.push((id, cat));
        }
        let mut edges: [BTreeMap<(u32, u32), u32>; 2] = Default::default();
        for set in edges.iter_mut() {
            let m = r.u64()?;
            for _ in 0..m {
                let (u, v, c) = (r.u32()?, r.u32()?, r.u32()?);
                set.insert((u, v), c);
            }
        }
        if r.pos != bytes.len() {
            return Err(IngestError::Format("trailing bytes after graph".into()));
        }
        Self::from_parts(nodes, edges)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub(crate) struct ByteReader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], IngestError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| IngestError::Format("unexpected end of artifact".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32, IngestError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, IngestError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self) -> Result<String, IngestError> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|e| IngestError::Format(e.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub sessions: usize,
    pub dropped_events: usize,
    pub cross_category_pairs: usize,
}

/// Builds the multiplex graph. Every catalog item becomes a node; session
/// items missing from the catalog are dropped and counted.
///
/// Within a session, a purchased pair gets a co_bought edge and a carted pair
/// a co_atc edge, where purchase counts as carted. Pairs from different
/// categories get no edge.
pub fn build_graph(
    events: &[SessionEvent],
    catalog: &BTreeMap<String, CatalogItem>,
    mode: ThreadMode,
) -> (MultiplexGraph, GraphStats) {
    let nodes: Vec<(String, String)> =
        catalog.values().map(|c| (c.item_id.clone(), c.category.clone())).collect();
    let index: HashMap<&str, u32> =
        catalog.keys().enumerate().map(|(i, k)| (k.as_str(), i as u32)).collect();
    let categories: Vec<&str> = catalog.values().map(|c| c.category.as_str()).collect();

    let mut stats = GraphStats::default();
    let mut sessions: BTreeMap<&str, (BTreeSet<u32>, BTreeSet<u32>)> = BTreeMap::new();
    for ev in events {
        let Some(&idx) = index.get(ev.item_id.as_str()) else {
            stats.dropped_events += 1;
            continue;
        };
        let entry = sessions.entry(ev.session_id.as_str()).or_default();
        entry.0.insert(idx);
        if ev.kind == EventKind::Purchase {
            entry.1.insert(idx);
        }
    }
    stats.sessions = sessions.len();

    let groups: Vec<&(BTreeSet<u32>, BTreeSet<u32>)> = sessions.values().collect();
    let per_session = par::map_slice(mode, &groups, |(carted, bought)| {
        let mut pairs: [Vec<(u32, u32)>; 2] = Default::default();
        let mut cross = 0usize;
        let carted: Vec<u32> = carted.iter().copied().collect();
        for (a_pos, &a) in carted.iter().enumerate() {
            for &b in &carted[a_pos + 1..] {
                if categories[a as usize] != categories[b as usize] {
                    cross += 1;
                    continue;
                }
                pairs[EdgeType::CoAtc.index()].push((a, b));
                if bought.contains(&a) && bought.contains(&b) {
                    pairs[EdgeType::CoBought.index()].push((a, b));
                }
            }
        }
        (pairs, cross)
    });

    let mut edges: [BTreeMap<(u32, u32), u32>; 2] = Default::default();
    for (pairs, cross) in per_session {
        stats.cross_category_pairs += cross;
        for (t, list) in pairs.into_iter().enumerate() {
            for p in list {
                *edges[t].entry(p).or_insert(0) += 1;
            }
        }
    }
    let graph = MultiplexGraph::from_parts(nodes, edges).expect("catalog-derived graph is well formed");
    (graph, stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorRule {
    /// Minimum number of distinct neighbors (over both edge types).
    pub min_degree: usize,
}

impl Default for AnchorRule {
    fn default() -> Self {
        Self { min_degree: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSets {
    /// Items with at least one session event.
    pub v_a: BTreeSet<String>,
    /// Items with at least one aspect annotation.
    pub v_b: BTreeSet<String>,
    /// Subset of `v_a` for which carousels are generated.
    pub anchors: BTreeSet<String>,
}

pub fn node_sets(
    events: &[SessionEvent],
    aspects: &[AspectAnnotation],
    graph: &MultiplexGraph,
    rule: AnchorRule,
) -> NodeSets {
    let v_a: BTreeSet<String> = events.iter().map(|e| e.item_id.clone()).collect();
    let v_b: BTreeSet<String> = aspects.iter().map(|a| a.item_id.clone()).collect();
    let anchors = v_a
        .iter()
        .filter(|id| graph.node_index(id).is_some_and(|i| graph.degree(i) >= rule.min_degree))
        .cloned()
        .collect();
    NodeSets { v_a, v_b, anchors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn item(id: &str, cat: &str) -> CatalogItem {
        CatalogItem {
            item_id: id.into(),
            category: cat.into(),
            product_type: format!("{cat}-pt"),
            price_band: 1,
            brand_rank: 1,
        }
    }

    fn ev(s: &str, i: &str, kind: EventKind) -> SessionEvent {
        SessionEvent { session_id: s.into(), item_id: i.into(), kind, timestamp: 0 }
    }

    fn catalog(items: &[(&str, &str)]) -> BTreeMap<String, CatalogItem> {
        items.iter().map(|(i, c)| (i.to_string(), item(i, c))).collect()
    }

    #[test]
    fn co_bought_same_category() {
        let cat = catalog(&[("A", "home"), ("B", "home")]);
        let events = [ev("s", "A", EventKind::Purchase), ev("s", "B", EventKind::Purchase)];
        let (g, _) = build_graph(&events, &cat, ThreadMode::Deterministic);
        let (a, b) = (g.node_index("A").unwrap(), g.node_index("B").unwrap());
        assert_eq!(g.neighbors(EdgeType::CoBought, a), &[b]);
        assert_eq!(g.neighbors(EdgeType::CoAtc, a), &[b]);
    }

    #[test]
    fn cart_only_pair_has_no_co_bought() {
        let cat = catalog(&[("A", "home"), ("B", "home")]);
        let events = [ev("s", "A", EventKind::Purchase), ev("s", "B", EventKind::AddToCart)];
        let (g, _) = build_graph(&events, &cat, ThreadMode::Deterministic);
        assert_eq!(g.edge_count(EdgeType::CoBought), 0);
        assert_eq!(g.edge_count(EdgeType::CoAtc), 1);
    }

    #[test]
    fn cross_category_has_no_edges() {
        let cat = catalog(&[("A", "home"), ("B", "books")]);
        let events = [ev("s", "A", EventKind::Purchase), ev("s", "B", EventKind::Purchase)];
        let (g, stats) = build_graph(&events, &cat, ThreadMode::Deterministic);
        assert_eq!(g.edge_count(EdgeType::CoBought) + g.edge_count(EdgeType::CoAtc), 0);
        assert_eq!(stats.cross_category_pairs, 1);
    }

    #[test]
    fn single_item_session_and_unknown_items() {
        let cat = catalog(&[("A", "home")]);
        let events = [ev("s", "A", EventKind::Purchase), ev("s", "ZZ", EventKind::Purchase)];
        let (g, stats) = build_graph(&events, &cat, ThreadMode::Deterministic);
        assert_eq!(g.edge_count(EdgeType::CoAtc), 0);
        assert_eq!(stats.dropped_events, 1);
    }

    #[test]
    fn repeated_pairs_deduplicate_with_counts() {
        let cat = catalog(&[("A", "home"), ("B", "home")]);
        let events = [
            ev("s1", "A", EventKind::AddToCart),
            ev("s1", "B", EventKind::AddToCart),
            ev("s1", "B", EventKind::AddToCart),
            ev("s2", "B", EventKind::AddToCart),
            ev("s2", "A", EventKind::AddToCart),
        ];
        let (g, _) = build_graph(&events, &cat, ThreadMode::Deterministic);
        let edges: Vec<_> = g.edges(EdgeType::CoAtc).collect();
        assert_eq!(edges, vec![((0, 1), 2)]);
    }

    #[test]
    fn node_set_membership() {
        let cat = catalog(&[("A", "home"), ("B", "home"), ("C", "home")]);
        let events = [ev("s", "A", EventKind::Purchase), ev("s", "B", EventKind::Purchase)];
        let aspects = [AspectAnnotation {
            item_id: "C".into(),
            aspect_id: "x".into(),
            aspect_text: "x".into(),
            asp_rel: 1.0,
            headers: ["h1".into(), "h2".into()],
        }];
        let (g, _) = build_graph(&events, &cat, ThreadMode::Deterministic);
        let sets = node_sets(&events, &aspects, &g, AnchorRule::default());
        assert!(sets.v_a.contains("A") && !sets.v_b.contains("A"));
        assert!(sets.v_b.contains("C") && !sets.v_a.contains("C"));
        assert_eq!(sets.anchors.len(), 2);
        let empty = node_sets(&[], &[], &g, AnchorRule::default());
        assert!(empty.v_a.is_empty() && empty.v_b.is_empty() && empty.anchors.is_empty());
    }

    #[test]
    fn graph_bytes_roundtrip_and_rejects_garbage() {
        let cat = catalog(&[("A", "home"), ("B", "home"), ("C", "toys")]);
        let events = [ev("s", "A", EventKind::Purchase), ev("s", "B", EventKind::AddToCart)];
        let (g, _) = build_graph(&events, &cat, ThreadMode::Deterministic);
        let bytes = g.to_bytes();
        assert_eq!(MultiplexGraph::from_bytes(&bytes).unwrap(), g);
        assert!(MultiplexGraph::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(MultiplexGraph::from_bytes(b"NOPE").is_err());
    }

    fn arb_events() -> impl Strategy<Value = Vec<SessionEvent>> {
        prop::collection::vec((0u8..6, 0u8..12, any::<bool>()), 0..60).prop_map(|v| {
            v.into_iter()
                .map(|(s, i, buy)| {
                    let kind = if buy { EventKind::Purchase } else { EventKind::AddToCart };
                    ev(&format!("s{s}"), &format!("i{i:02}"), kind)
                })
                .collect()
        })
    }

    fn toy_catalog() -> BTreeMap<String, CatalogItem> {
        (0..10).map(|i| {
            let id = format!("i{i:02}");
            (id.clone(), item(&id, if i % 3 == 0 { "books" } else { "home" }))
        }).collect()
    }

    proptest! {
        #[test]
        fn graph_invariants(events in arb_events(), shift in 0usize..60) {
            let cat = toy_catalog();
            let (g, _) = build_graph(&events, &cat, ThreadMode::Deterministic);
            let mut sizes: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
            for e in &events {
                sizes.entry(&e.session_id).or_default().insert(&e.item_id);
            }
            let bound: usize = sizes.values().map(|s| s.len() * s.len().saturating_sub(1) / 2).sum();
            for r in EdgeType::ALL {
                prop_assert!(g.edge_count(r) <= bound);
                for ((u, v), _) in g.edges(r) {
                    prop_assert!(u != v);
                    prop_assert_eq!(g.category(u), g.category(v));
                }
            }
            // order invariance
            let mut rotated = events.clone();
            if !rotated.is_empty() {
                let k = shift % rotated.len();
                rotated.rotate_left(k);
                rotated.reverse();
            }
            let (g2, _) = build_graph(&rotated, &cat, ThreadMode::Parallel);
            prop_assert_eq!(g, g2);
        }
    }
}
