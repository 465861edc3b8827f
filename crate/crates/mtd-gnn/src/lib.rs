//! Multi-task temporally-dynamic graph attention network with a built-in
//! synthetic dynamic-scene benchmark.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: reverse-mode autodiff over a small closed primitive set,
//!   Adam, and the epoch learning-rate schedule.
//! - [`graph`]: dynamic graphs over detection frames, optimal temporal
//!   linking, and JSON serialization.
//! - [`model`]: the factorized spatio-temporal graph attention network,
//!   per-relation edge heads, a padded RNN baseline, and checkpoints.
//! - [`loss`] / [`metrics`]: prioritized binary cross-entropy and the
//!   evaluation metrics (F1, average precision, AUC, recall at K).
//! - [`synth`]: a deterministic 2D physics scene generator that produces
//!   labeled datasets for the benchmark.
//! - [`train`]: configuration, the training loop, evaluation, and ablations.
//! - [`verify`]: self-check suite with optional fault injection.

pub mod error;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
