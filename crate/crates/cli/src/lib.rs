//! Reproducible runs over the `maskcd` library: synthesis, profiling, mask
//! construction, decoding, evaluation and plotting.
//!
//! Every command is a thin wrapper over library calls. Files carry the hash
//! of the model file they were produced with and commands refuse inputs
//! whose hash differs from the active model.

pub mod commands;
pub mod config;

pub use commands::{Context, Overrides, RunSummary};
pub use config::{GroundingSpec, ModelFile, PriorKind, RunConfig};
