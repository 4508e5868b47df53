//! ResArg and ResAttArg networks over a small gradient-checked substrate.
//!
//! Layers keep their forward intermediates in explicit caches; each
//! `backward` consumes a cache and accumulates parameter gradients into a
//! zero-initialized structure of the same type as the parameters.

pub mod attention;
mod checkpoint;
mod config;
pub mod layers;
pub mod lstm;
mod model;
mod params;
pub mod tensors;

pub use attention::{attention, masked_average, AttentionParams, AttentionStep};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry};
pub use config::{ArchConfig, Variant};
pub use layers::ForwardMode;
pub use model::{AttentionTrace, HeadGrads, HeadOutputs, HeadPrediction, Model, PairBatch, Trace};
pub use params::{count_params, init_params, DeepEmbedder, ModelParams, ParamCount};
pub use tensors::{TensorKind, Tensors};
