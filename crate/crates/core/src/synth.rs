//! Planted-cluster synthetic datasets in the ingest file formats.
//!
//! Each category's items are split into clusters. Sessions draw their items
//! from one cluster, except that each item is swapped for one from another
//! cluster of the same category with probability `mixing_rate`. Aspect counts
//! per item follow a rounded log-normal (mean about 8.6, floor 1); roughly
//! half of an item's aspects come from its cluster's pool, the rest from the
//! whole vocabulary.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{AspectAnnotation, CatalogItem, EventKind, SessionEvent};
use crate::par::{self, ThreadMode};
use crate::seed;

#[derive(Debug, Error)]
#[error("invalid synth config: {0}")]
pub struct SynthError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_categories: usize,
    pub items_per_category: usize,
    pub clusters_per_category: usize,
    /// Total sessions, spread evenly over categories.
    pub sessions: usize,
    pub session_size_min: usize,
    pub session_size_max: usize,
    pub purchase_prob: f64,
    pub mixing_rate: f64,
    pub aspect_vocab_size: usize,
    pub cluster_aspect_pool: usize,
    pub aspect_log_mu: f64,
    pub aspect_log_sigma: f64,
    pub aspect_max: usize,
    pub similar_per_item: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_categories: 1,
            items_per_category: 200,
            clusters_per_category: 4,
            sessions: 3000,
            session_size_min: 2,
            session_size_max: 6,
            purchase_prob: 0.6,
            mixing_rate: 0.05,
            aspect_vocab_size: 2000,
            cluster_aspect_pool: 16,
            // exp(mu + sigma^2 / 2) = 8.61, sd 14.95
            aspect_log_mu: 1.458,
            aspect_log_sigma: 1.179,
            aspect_max: 419,
            similar_per_item: 3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: &str| Err(SynthError(m.to_string()));
        if self.num_categories == 0 || self.items_per_category == 0 || self.clusters_per_category == 0 {
            return err("category, item and cluster counts must be positive");
        }
        if self.clusters_per_category > self.items_per_category {
            return err("more clusters than items in a category");
        }
        if self.session_size_min < 1 || self.session_size_min > self.session_size_max {
            return err("session size range must satisfy 1 <= min <= max");
        }
        if !(0.0..=1.0).contains(&self.purchase_prob) || !(0.0..=1.0).contains(&self.mixing_rate) {
            return err("purchase_prob and mixing_rate must be in [0, 1]");
        }
        if !(self.aspect_log_sigma > 0.0) || !self.aspect_log_mu.is_finite() {
            return err("aspect log-normal parameters must be finite with sigma > 0");
        }
        if self.aspect_max == 0 || self.aspect_vocab_size < self.aspect_max {
            return err("aspect vocabulary must hold at least aspect_max aspects");
        }
        if self.cluster_aspect_pool == 0 || self.cluster_aspect_pool > self.aspect_vocab_size {
            return err("cluster aspect pool must be in 1..=aspect_vocab_size");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub sessions: Vec<SessionEvent>,
    pub catalog: Vec<CatalogItem>,
    pub aspects: Vec<AspectAnnotation>,
    pub similarity: Vec<(String, String)>,
    /// Item id to planted cluster label.
    pub clusters: BTreeMap<String, String>,
}

const ADJECTIVES: &[&str] = &[
    "stylish", "sturdy", "lightweight", "comfortable", "durable", "affordable", "elegant", "compact",
    "soft", "warm", "breathable", "waterproof", "versatile", "easy to clean", "well made", "quiet",
    "spacious", "portable", "cozy", "bright", "colorful", "minimal", "rustic", "modern", "classic",
    "sleek", "roomy", "gentle", "handy", "reliable", "flexible", "smooth",
];

pub fn aspect_id(i: usize) -> String {
    format!("asp{i:05}")
}

/// Phrase for vocabulary entry `i`; unique for `i < ADJECTIVES.len()^2`.
pub fn aspect_text(i: usize) -> String {
    let n = ADJECTIVES.len();
    if i < n {
        ADJECTIVES[i].to_string()
    } else {
        format!("{} and {}", ADJECTIVES[(i / n) % n], ADJECTIVES[i % n])
    }
}

pub fn headers_for(text: &str) -> [String; 2] {
    [format!("Similar items that are {text}"), format!("Customers say these are {text}")]
}

fn item_id(global: usize) -> String {
    format!("item{global:06}")
}

struct CategoryData {
    sessions: Vec<SessionEvent>,
    catalog: Vec<CatalogItem>,
    aspects: Vec<AspectAnnotation>,
    similarity: Vec<(String, String)>,
    clusters: Vec<(String, String)>,
}

pub fn generate_synthetic(config: &SynthConfig, mode: ThreadMode) -> Result<SynthData, SynthError> {
    config.validate()?;
    let per_cat = par::map_range(mode, config.num_categories, |c| generate_category(config, c));
    let mut out = SynthData {
        sessions: Vec::new(),
        catalog: Vec::new(),
        aspects: Vec::new(),
        similarity: Vec::new(),
        clusters: BTreeMap::new(),
    };
    for d in per_cat {
        out.sessions.extend(d.sessions);
        out.catalog.extend(d.catalog);
        out.aspects.extend(d.aspects);
        out.similarity.extend(d.similarity);
        out.clusters.extend(d.clusters);
    }
    Ok(out)
}

fn generate_category(config: &SynthConfig, c: usize) -> CategoryData {
    let mut rng = seed::rng(config.seed, &[seed::label("synth-category"), c as u64]);
    let n = config.items_per_category;
    let k = config.clusters_per_category;
    let category = format!("cat{c:03}");

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut cluster_of = vec![0usize; n];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (pos, &i) in perm.iter().enumerate() {
        cluster_of[i] = pos % k;
    }
    for i in 0..n {
        members[cluster_of[i]].push(i);
    }
    let ids: Vec<String> = (0..n).map(|i| item_id(c * n + i)).collect();

    let catalog = (0..n)
        .map(|i| CatalogItem {
            item_id: ids[i].clone(),
            category: category.clone(),
            product_type: format!("{category}_type{}", cluster_of[i]),
            price_band: rng.random_range(0..=5),
            brand_rank: rng.random_range(1..=1000),
        })
        .collect();

    let lognormal = LogNormal::new(config.aspect_log_mu, config.aspect_log_sigma).expect("validated");
    let vocab = config.aspect_vocab_size;
    let pool = config.cluster_aspect_pool;
    let mut aspects = Vec::new();
    for i in 0..n {
        let count = (lognormal.sample(&mut rng).round() as usize).clamp(1, config.aspect_max);
        let g = c * k + cluster_of[i];
        let shared = count.div_ceil(2).min(pool);
        let mut chosen = BTreeSet::new();
        let mut picks: Vec<(usize, f64)> = Vec::with_capacity(count);
        for s in sample(&mut rng, pool, shared) {
            let a = (g * pool + s) % vocab;
            chosen.insert(a);
            picks.push((a, rng.random_range(0.5..=1.0)));
        }
        while picks.len() < count {
            let a = rng.random_range(0..vocab);
            if chosen.insert(a) {
                picks.push((a, rng.random_range(0.05..0.5)));
            }
        }
        picks.sort_by_key(|p| p.0);
        for (a, rel) in picks {
            let text = aspect_text(a);
            aspects.push(AspectAnnotation {
                item_id: ids[i].clone(),
                aspect_id: aspect_id(a),
                headers: headers_for(&text),
                aspect_text: text,
                asp_rel: rel,
            });
        }
    }

    let sessions_here = config.sessions / config.num_categories
        + usize::from(c < config.sessions % config.num_categories);
    let mut sessions = Vec::new();
    for s in 0..sessions_here {
        let session_id = format!("{category}_s{s:06}");
        let home = rng.random_range(0..k);
        let size = rng.random_range(config.session_size_min..=config.session_size_max);
        for p in 0..size {
            let mut cl = home;
            if k > 1 && rng.random_bool(config.mixing_rate) {
                cl = (home + rng.random_range(1..k)) % k;
            }
            let item = members[cl][rng.random_range(0..members[cl].len())];
            let ts = (s * 100 + p * 2) as i64;
            let purchased = rng.random_bool(config.purchase_prob);
            sessions.push(SessionEvent {
                session_id: session_id.clone(),
                item_id: ids[item].clone(),
                kind: EventKind::AddToCart,
                timestamp: ts,
            });
            if purchased {
                sessions.push(SessionEvent {
                    session_id: session_id.clone(),
                    item_id: ids[item].clone(),
                    kind: EventKind::Purchase,
                    timestamp: ts + 1,
                });
            }
        }
    }

    let mut similarity = BTreeSet::new();
    for i in 0..n {
        let mates = &members[cluster_of[i]];
        if mates.len() < 2 {
            continue;
        }
        for _ in 0..config.similar_per_item {
            let j = mates[rng.random_range(0..mates.len())];
            if j != i {
                similarity.insert((ids[i.min(j)].clone(), ids[i.max(j)].clone()));
            }
        }
    }

    let clusters = (0..n).map(|i| (ids[i].clone(), format!("{category}_c{}", cluster_of[i]))).collect();
    CategoryData { sessions, catalog, aspects, similarity: similarity.into_iter().collect(), clusters }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_graph, EdgeType};

    fn small() -> SynthConfig {
        SynthConfig { num_categories: 2, items_per_category: 60, clusters_per_category: 3, sessions: 400, ..Default::default() }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_synthetic(&small(), ThreadMode::Deterministic).unwrap();
        let b = generate_synthetic(&small(), ThreadMode::Parallel).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthConfig { seed: 9, ..small() }, ThreadMode::Deterministic).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_mixing_means_no_cross_cluster_edges() {
        let cfg = SynthConfig { mixing_rate: 0.0, ..small() };
        let d = generate_synthetic(&cfg, ThreadMode::Deterministic).unwrap();
        let catalog = d.catalog.iter().map(|c| (c.item_id.clone(), c.clone())).collect();
        let (g, _) = build_graph(&d.sessions, &catalog, ThreadMode::Deterministic);
        assert!(g.edge_count(EdgeType::CoAtc) > 0);
        for r in EdgeType::ALL {
            for ((u, v), _) in g.edges(r) {
                assert_eq!(d.clusters[g.node_id(u)], d.clusters[g.node_id(v)]);
            }
        }
    }

    #[test]
    fn every_item_has_an_aspect_and_unique_pairs() {
        let d = generate_synthetic(&small(), ThreadMode::Deterministic).unwrap();
        let mut seen = BTreeSet::new();
        for a in &d.aspects {
            assert!(seen.insert((a.item_id.clone(), a.aspect_id.clone())));
            assert!(a.asp_rel > 0.0 && a.asp_rel <= 1.0);
        }
        let items: BTreeSet<_> = d.aspects.iter().map(|a| a.item_id.clone()).collect();
        assert_eq!(items.len(), 120);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SynthConfig { clusters_per_category: 0, ..small() }.validate().is_err());
        assert!(SynthConfig { mixing_rate: 1.5, ..small() }.validate().is_err());
        assert!(SynthConfig { aspect_vocab_size: 10, ..small() }.validate().is_err());
    }

    #[test]
    fn aspect_text_is_unique_over_vocabulary() {
        let texts: BTreeSet<String> = (0..1024).map(aspect_text).collect();
        assert_eq!(texts.len(), 1024);
    }
}
