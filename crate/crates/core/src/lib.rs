//! # stc-core
//!
//! Circuit tracing for vision-language transformers.
//!
//! The crate bundles a small deterministic decoder-only transformer with
//! intervention hooks and the three analyses built on it:
//!
//! - **Visual token auditing**: ablate or text-inject selected visual tokens
//!   (random, register, object, object + buffer) and measure the accuracy drop
//!   on open and close questions ([`eval`], [`runner::circuit1`]).
//! - **Semantic tracing**: decode every layer of every visual token through
//!   the final norm and unembedding head ([`lens`], [`runner::circuit2`]).
//! - **Attention flow**: block attention from token sets to the answer
//!   position inside layer windows ([`intervention`], [`runner::circuit3`]).
//!
//! Activations exported from real checkpoints can be loaded through the
//! `STCACT01` binary format in [`dump`].

pub mod config;
pub mod dump;
pub mod embedding;
pub mod episode;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod intervention;
pub mod lens;
pub mod math;
pub mod model;
pub mod report;
pub mod runner;
pub mod seed;
pub mod vocab;

/// Vocabulary index.
pub type TokenId = u32;

pub use embedding::{EmbeddingSet, Provenance};
pub use error::{Error, Result};
pub use geometry::{BBox, FrameGrid, TokenSet};
pub use intervention::{InterventionSpec, LayerRange, LayerWindows, Window};
pub use model::{ForwardCache, ForwardTrace, InputSequence, Model, ModelConfig};
