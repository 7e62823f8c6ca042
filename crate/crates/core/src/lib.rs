//! Offline engine for aspect-grounded recommendation carousels.
//!
//! Stages, in pipeline order:
//!
//! * [`ingest`]: parse sessions, catalog, aspects and similarity pairs; build
//!   the co-bought / co-add-to-cart multiplex graph and KG triples.
//! * [`kge`]: DistMult base embeddings from the KG.
//! * [`gatne`]: per-edge-type node embeddings over the multiplex graph.
//! * [`recall`]: exact L2 recall sets restricted to aspect-bearing items.
//! * [`carousel`]: aspect scoring, header selection and carousel assembly.
//! * [`synth`], [`eval`], [`oracle`]: synthetic data, NDCG, brute-force checks.
//! * [`pipeline`]: config, artifacts and the run manifest.

pub mod carousel;
pub mod eval;
pub mod fsio;
pub mod gatne;
pub mod ingest;
pub mod kge;
pub mod matrix;
pub mod oracle;
pub mod par;
pub mod pipeline;
pub mod recall;
pub mod seed;
pub mod synth;

pub use matrix::EmbeddingMatrix;
pub use par::ThreadMode;
