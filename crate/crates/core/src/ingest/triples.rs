//! Knowledge-graph triples derived from catalog, aspect and similarity data.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::records::{AspectAnnotation, CatalogItem};
use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    ProductType,
    Aspect,
    Similarity,
    PriceBand,
    Brand,
}

impl Relation {
    pub const ALL: [Relation; 5] = [
        Relation::ProductType,
        Relation::Aspect,
        Relation::Similarity,
        Relation::PriceBand,
        Relation::Brand,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::ProductType => "product_type",
            Relation::Aspect => "aspect",
            Relation::Similarity => "similarity",
            Relation::PriceBand => "price_band",
            Relation::Brand => "brand",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: u32,
    pub relation: Relation,
    pub tail: u32,
}

/// Entity vocabulary plus deduplicated, sorted triples. Item entities occupy
/// ids `0..item_count` in ascending id order; attribute entities follow in
/// ascending name order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entities: Vec<String>,
    index: HashMap<String, u32>,
    item_count: usize,
    triples: Vec<Triple>,
}

pub fn product_type_entity(pt: &str) -> String {
    format!("ptype:{pt}")
}

pub fn aspect_entity(aspect_id: &str) -> String {
    format!("aspect:{aspect_id}")
}

pub fn price_band_entity(band: u8) -> String {
    format!("band_{band}")
}

pub fn brand_entity(decile: u8) -> String {
    format!("brand_decile_{decile}")
}

/// Decile (0..=9) of each item's brand rank within the catalog: the share of
/// items with a strictly smaller rank, times ten.
pub fn brand_deciles(catalog: &BTreeMap<String, CatalogItem>) -> BTreeMap<String, u8> {
    let mut ranks: Vec<u64> = catalog.values().map(|c| c.brand_rank).collect();
    ranks.sort_unstable();
    let n = ranks.len().max(1) as u128;
    catalog
        .values()
        .map(|c| {
            let below = ranks.partition_point(|&r| r < c.brand_rank) as u128;
            (c.item_id.clone(), ((10 * below / n) as u8).min(9))
        })
        .collect()
}

impl KnowledgeGraph {
    fn assemble(items: BTreeSet<String>, named: Vec<(String, Relation, String)>) -> Self {
        let item_count = items.len();
        let attrs: BTreeSet<&String> =
            named.iter().map(|(_, _, t)| t).filter(|t| !items.contains(*t)).collect();
        let mut entities: Vec<String> = items.iter().cloned().collect();
        entities.extend(attrs.into_iter().cloned());
        let index: HashMap<String, u32> =
            entities.iter().enumerate().map(|(i, e)| (e.clone(), i as u32)).collect();
        let triples: BTreeSet<Triple> = named
            .iter()
            .map(|(h, r, t)| Triple { head: index[h], relation: *r, tail: index[t] })
            .collect();
        Self { entities, index, item_count, triples: triples.into_iter().collect() }
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn entity_index(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    pub fn item_ids(&self) -> &[String] {
        &self.entities[..self.item_count]
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in &self.triples {
            out.push_str(&self.entities[t.head as usize]);
            out.push('\t');
            out.push_str(t.relation.name());
            out.push('\t');
            out.push_str(&self.entities[t.tail as usize]);
            out.push('\n');
        }
        out
    }

    /// Reads `head<TAB>relation<TAB>tail` lines. Items are the heads plus the
    /// tails of similarity triples, which reproduces the vocabulary built by
    /// [`extract_triples`].
    pub fn from_tsv<R: BufRead>(reader: R) -> Result<Self, IngestError> {
        let mut named = Vec::new();
        let mut items = BTreeSet::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |message: String| IngestError::Record { line: idx + 1, message };
            let [h, r, t] = fields[..] else {
                return Err(bad("expected head<TAB>relation<TAB>tail".into()));
            };
            let rel = Relation::from_name(r).ok_or_else(|| bad(format!("unknown relation {r:?}")))?;
            items.insert(h.to_owned());
            if rel == Relation::Similarity {
                items.insert(t.to_owned());
            }
            named.push((h.to_owned(), rel, t.to_owned()));
        }
        Ok(Self::assemble(items, named))
    }
}

/// Builds the KG: one triple per (item, product type), (item, aspect),
/// (item, similar item) in both directions, (item, price band) and
/// (item, brand-rank decile).
pub fn extract_triples(
    catalog: &BTreeMap<String, CatalogItem>,
    aspects: &[AspectAnnotation],
    similarity: &[(String, String)],
) -> KnowledgeGraph {
    let mut items: BTreeSet<String> = catalog.keys().cloned().collect();
    items.extend(aspects.iter().map(|a| a.item_id.clone()));
    for (a, b) in similarity {
        items.insert(a.clone());
        items.insert(b.clone());
    }

    let deciles = brand_deciles(catalog);
    let mut named = Vec::new();
    for c in catalog.values() {
        named.push((c.item_id.clone(), Relation::ProductType, product_type_entity(&c.product_type)));
        named.push((c.item_id.clone(), Relation::PriceBand, price_band_entity(c.price_band)));
        named.push((c.item_id.clone(), Relation::Brand, brand_entity(deciles[&c.item_id])));
    }
    for a in aspects {
        named.push((a.item_id.clone(), Relation::Aspect, aspect_entity(&a.aspect_id)));
    }
    for (a, b) in similarity {
        if a == b {
            continue;
        }
        named.push((a.clone(), Relation::Similarity, b.clone()));
        named.push((b.clone(), Relation::Similarity, a.clone()));
    }
    KnowledgeGraph::assemble(items, named)
}
