//! Aspect scoring over recall sets and carousel assembly.
//!
//! An aspect's score for an anchor is the mean, over recall items carrying
//! it, of `ann_rel * asp_rel`. Ranking is by score, then by support (number
//! of carrying items), then by ascending aspect id.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ingest::AspectAnnotation;
use crate::par::{self, ThreadMode};
use crate::recall::RecallSet;

pub const DEFAULT_MIN_SUPPORT: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct AspectScore {
    pub aspect_id: String,
    pub score: f64,
    pub support: usize,
    /// Carrying recall items, in recall order.
    pub items: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AspectScoreTable {
    pub anchor: String,
    /// One entry per aspect present in the recall set, ascending aspect id.
    pub aspects: Vec<AspectScore>,
}

impl AspectScoreTable {
    pub fn get(&self, aspect_id: &str) -> Option<&AspectScore> {
        self.aspects.iter().find(|a| a.aspect_id == aspect_id)
    }
}

pub fn aspect_scores(recall: &RecallSet, aspects: &BTreeMap<String, Vec<AspectAnnotation>>) -> AspectScoreTable {
    let mut acc: BTreeMap<&str, (f64, Vec<String>)> = BTreeMap::new();
    for (item, ann) in &recall.entries {
        for a in aspects.get(item).map(Vec::as_slice).unwrap_or_default() {
            let e = acc.entry(a.aspect_id.as_str()).or_default();
            e.0 += ann * a.asp_rel;
            e.1.push(item.clone());
        }
    }
    let aspects = acc
        .into_iter()
        .map(|(id, (sum, items))| AspectScore {
            aspect_id: id.to_string(),
            score: sum / items.len() as f64,
            support: items.len(),
            items,
        })
        .collect();
    AspectScoreTable { anchor: recall.anchor.clone(), aspects }
}

fn rank_order(a: &AspectScore, b: &AspectScore) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.support.cmp(&a.support))
        .then_with(|| a.aspect_id.cmp(&b.aspect_id))
}

/// Up to `k` aspects with support at least `min_support`, best first.
pub fn select_aspect(table: &AspectScoreTable, min_support: usize, k: usize) -> Vec<&AspectScore> {
    let mut ranked: Vec<&AspectScore> = table.aspects.iter().filter(|a| a.support >= min_support).collect();
    ranked.sort_by(|a, b| rank_order(a, b));
    ranked.truncate(k);
    ranked
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantPolicy {
    VariantA,
    VariantB,
    /// Picks a variant from the low bit of `sha256(anchor || 0x00 || aspect_id)`.
    #[default]
    HashSplit,
}

pub fn hash_variant(anchor: &str, aspect_id: &str) -> usize {
    let mut h = Sha256::new();
    h.update(anchor.as_bytes());
    h.update([0u8]);
    h.update(aspect_id.as_bytes());
    (h.finalize()[0] & 1) as usize
}

pub fn render_header(anchor: &str, aspect: &AspectAnnotation, policy: VariantPolicy) -> String {
    let v = match policy {
        VariantPolicy::VariantA => 0,
        VariantPolicy::VariantB => 1,
        VariantPolicy::HashSplit => hash_variant(anchor, &aspect.aspect_id),
    };
    aspect.headers[v].clone()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHeader {
    pub aspect_id: String,
    pub header: String,
    pub score: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Carousel {
    pub anchor: String,
    pub aspect_id: String,
    pub header: String,
    pub items: Vec<String>,
    pub score: f64,
    pub support: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranked_headers: Option<Vec<RankedHeader>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CarouselOptions {
    pub min_support: usize,
    pub policy: VariantPolicy,
    /// When set, attach the best `k` headers to each carousel.
    pub top_k_headers: Option<usize>,
}

impl Default for CarouselOptions {
    fn default() -> Self {
        Self { min_support: DEFAULT_MIN_SUPPORT, policy: VariantPolicy::default(), top_k_headers: None }
    }
}

fn annotation<'a>(
    aspects: &'a BTreeMap<String, Vec<AspectAnnotation>>,
    item: &str,
    aspect_id: &str,
) -> Option<&'a AspectAnnotation> {
    aspects.get(item)?.iter().find(|a| a.aspect_id == aspect_id)
}

/// Builds the carousel for one anchor, or `None` when no aspect qualifies.
pub fn assemble_carousel(
    recall: &RecallSet,
    aspects: &BTreeMap<String, Vec<AspectAnnotation>>,
    options: &CarouselOptions,
) -> Option<Carousel> {
    let table = aspect_scores(recall, aspects);
    let k = options.top_k_headers.unwrap_or(1).max(1);
    let ranked = select_aspect(&table, options.min_support, k);
    let header_for = |a: &AspectScore| {
        // headers are taken from the highest-relevance carrying item
        let ann = annotation(aspects, &a.items[0], &a.aspect_id).expect("contributing item carries aspect");
        render_header(&recall.anchor, ann, options.policy)
    };
    let best = *ranked.first()?;
    let ranked_headers = options.top_k_headers.map(|_| {
        ranked
            .iter()
            .map(|a| RankedHeader {
                aspect_id: a.aspect_id.clone(),
                header: header_for(a),
                score: a.score,
                support: a.support,
            })
            .collect()
    });
    Some(Carousel {
        anchor: recall.anchor.clone(),
        aspect_id: best.aspect_id.clone(),
        header: header_for(best),
        items: best.items.clone(),
        score: best.score,
        support: best.support,
        ranked_headers,
    })
}

/// Carousels for every recall set, plus the number of anchors suppressed.
pub fn build_carousels(
    recalls: &[RecallSet],
    aspects: &BTreeMap<String, Vec<AspectAnnotation>>,
    options: &CarouselOptions,
    mode: ThreadMode,
) -> (Vec<Carousel>, usize) {
    let out = par::map_slice(mode, recalls, |r| assemble_carousel(r, aspects, options));
    let suppressed = out.iter().filter(|c| c.is_none()).count();
    (out.into_iter().flatten().collect(), suppressed)
}
