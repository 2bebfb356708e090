//! Early intent prediction from short multi-modal observation windows.
//!
//! The model encodes per-modality sequences with transformer encoders whose
//! attention is gated by a learned causal mask, fuses them through a
//! cross-attention decoder driven by a coarser query grid, and emits a
//! crossing probability at every query step. Training adds an anticipation
//! regularizer pulling early decoder states toward the final one.

pub mod autodiff;
pub mod blocks;
pub mod data;
pub mod error;
pub mod eval;
pub mod json_io;
pub mod maskgen;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod training;

pub use error::{Error, Result};
