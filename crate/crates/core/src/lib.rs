//! Image-head profiling and head-masked contrastive decoding.
//!
//! The crate hosts a small deterministic decoder-only transformer that reads
//! mixed image/text token sequences ([`model`]), instrumentation that records
//! how much attention every head spends on the image span and turns those
//! records into an image-head mask ([`trace`]), greedy and contrastive
//! decoding ([`decoding`]), synthetic grounded scenes and probing questions
//! ([`synthdata`]) and CHAIR/POPE style metrics ([`eval`]).
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pin the common instantiations.

pub mod decoding;
pub mod error;
pub mod eval;
pub mod grid;
pub mod model;
pub mod scalar;
pub mod seed;
pub mod synthdata;
pub mod trace;

pub use error::{Error, Result};
pub use grid::{HeadGrid, HeadId};
pub use scalar::Scalar;

pub use decoding::{
    contrastive_combine, decode_baseline, decode_maskcd, DecodeParams, DecodeResult, LogitSource,
    Strategy,
};
pub use model::{
    build_grounded_model, build_model, GroundingOptions, IncrementalState, Model, ModelConfig,
    MultimodalSequence, Normalization, Role, StepOutput, TokenId,
};
pub use trace::{
    build_mask, count_exceedances, mask_overlap, mask_stats, normalize_counts, profile,
    random_mask, record_step, AttentionTrace, CountMatrix, ImageHeadMask, MaskStats, Overlap,
};

/// Single-precision model.
pub type Model32 = Model<f32>;
/// Double-precision model.
pub type Model64 = Model<f64>;
/// Single-precision step output.
pub type StepOutput32 = StepOutput<f32>;
/// Double-precision step output.
pub type StepOutput64 = StepOutput<f64>;
/// Single-precision decode result.
pub type DecodeResult32 = DecodeResult<f32>;
/// Double-precision decode result.
pub type DecodeResult64 = DecodeResult<f64>;
