//! Numeric foundation: tensors, reverse-mode autodiff, activations and
//! losses, the AdamW optimizer, and a finite-difference gradient checker.
//!
//! Everything is f64, row-major and strictly sequential, so results are
//! reproducible bit-for-bit across runs and platforms.

pub mod adamw;
pub mod functions;
pub mod grad_check;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adamw::{AdamW, AdamWConfig};
pub use functions::{cross_entropy, gelu, normal_cdf, softmax};
pub use grad_check::{grad_check, GRAD_CHECK_EPS};
pub use params::{ParamStore, Parameter};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
