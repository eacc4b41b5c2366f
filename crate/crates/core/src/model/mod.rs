//! Deterministic decoder-only transformer over mixed image/text sequences.
//!
//! Weights are regenerated from `(config, seed)`; nothing is trained. Every
//! forward step exposes the last query's attention row for each head, and an
//! optional [`ImageHeadMask`](crate::trace::ImageHeadMask) zeroes the
//! attention output of masked heads before the layer's output projection.

mod config;
mod forward;
mod grounded;
mod sequence;
mod weights;

pub use config::{ModelConfig, Normalization};
pub use forward::{IncrementalState, StepOutput};
pub use grounded::{build_grounded_model, GroundingLayout, GroundingOptions, HeadRole, LanguagePrior};
pub use sequence::{MultimodalSequence, Role};
pub use weights::{build_model, LayerWeights, Model, Weights};

/// Abstract token id. Natural-language tokenization is out of scope.
pub type TokenId = u32;
