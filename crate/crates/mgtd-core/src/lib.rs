//! Machine-generated-text detection: a multi-task transformer classifier
//! with a classical TF-IDF baseline, trained and evaluated end to end on
//! CPU with reproducible results.
//!
//! The crate is organized bottom-up:
//!
//! - [`rng`] / [`numerics`]: deterministic randomness, tensors,
//!   reverse-mode autodiff, AdamW.
//! - [`corpus`] / [`text`]: labeled samples, JSONL I/O, the synthetic
//!   corpus generator, tokenization.
//! - [`encoder`] / [`heads`] / [`multitask`]: the shared transformer
//!   encoder and its classification heads.
//! - [`trainer`]: two-stage training loop and checkpointing.
//! - [`baseline`]: TF-IDF + logistic regression reference model.
//! - [`metrics`] / [`analysis`] / [`export`]: evaluation, embedding
//!   analyses (PCA, silhouette), CSV/SVG artifacts.

pub mod analysis;
pub mod baseline;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod export;
pub mod heads;
pub mod metrics;
pub mod multitask;
pub mod numerics;
pub mod pipeline;
pub mod rng;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
