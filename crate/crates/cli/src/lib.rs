//! Command-line orchestration for the `argmine` library: config files,
//! artifact layout and the pipeline stages behind the `argmine` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod layout;
pub mod sources;

pub use commands::Context;
pub use config::RunConfig;
pub use error::{code, StageError};
