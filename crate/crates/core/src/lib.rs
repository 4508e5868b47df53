//! Multi-task residual networks for argument mining.
//!
//! The crate covers the whole path from annotated documents to evaluated
//! ensemble predictions:
//!
//! - [`corpus`]: the normalized argument-graph model, standoff ingestion,
//!   validation and a seeded synthetic generator.
//! - [`pairing`]: ordered component pairs, their four gold labels and the
//!   10-bit argumentative-distance code.
//! - [`embeddings`]: frozen word-vector tables and padded token sequences.
//! - [`neural`]: the ResArg / ResAttArg networks with exact reverse-mode
//!   gradients and finite-difference checking.
//! - [`training`]: the weighted multi-task loss, Adam, learning-rate decay
//!   and early stopping.
//! - [`ensemble`]: majority voting and component-label resolution.
//! - [`metrics`]: F1 families, confusion matrices, token projection and
//!   Krippendorff's alpha.

pub mod artifact;
pub mod corpus;
pub mod dataset;
pub mod embeddings;
pub mod ensemble;
mod error;
pub mod gradcheck;
pub mod metrics;
pub mod neural;
pub mod pairing;
pub mod training;

pub use corpus::{ArgComponent, CorpusSchema, Document, LinkAnnotation, RelationLabel, SplitTag};
pub use embeddings::{EmbeddingTable, TokenSequence};
pub use error::{Error, Result};
pub use neural::{ArchConfig, HeadPrediction, Model, ModelParams, Variant};
pub use pairing::{DistanceCode, PairInstance, PairPolicy};
pub use training::{TrainConfig, TrainHistory};
