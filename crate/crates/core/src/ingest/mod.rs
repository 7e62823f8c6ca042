//! Parsing of session, catalog, aspect and similarity inputs; multiplex
//! graph construction; KG triple extraction.

mod graph;
mod records;
mod triples;

pub use graph::{build_graph, node_sets, AnchorRule, EdgeType, GraphStats, MultiplexGraph, NodeSets};
pub(crate) use graph::ByteReader;
pub use records::{
    aspects_by_item, parse_aspects, parse_catalog, parse_sessions, parse_similarity, write_jsonl,
    AspectAnnotation, CatalogItem, EventKind, ParseMode, Parsed, SessionEvent,
};
pub use triples::{
    aspect_entity, brand_deciles, brand_entity, extract_triples, price_band_entity,
    product_type_entity, KnowledgeGraph, Relation, Triple,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("malformed artifact: {0}")]
    Format(String),
}
