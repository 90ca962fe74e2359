//! Desk-scale timbre editing lab.
//!
//! The pipeline: a procedurally generated instrument corpus feeds a small
//! conditional latent-diffusion model; an instrument classifier probes the
//! per-step clean-latent estimate during sampling to pick the timestep at
//! which swapping the instrument condition preserves content while changing
//! timbre; an evaluation suite scores edits against random/midpoint swap
//! baselines with chroma distance, instrument accuracy, and a kernel
//! distance on classifier embeddings.

pub mod classify;
pub mod config;
pub mod corpus;
pub mod diffusion;
pub mod dsp;
pub mod edit;
pub mod error;
pub mod eval;
pub mod latent;
pub mod nn;
pub mod pipeline;
pub mod rng;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
