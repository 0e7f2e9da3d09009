//! Activation and loss functions, both as scalar kernels (shared with the
//! tape ops) and as standalone tensor operations.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF, exact erf form.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// GELU: x * Phi(x), using the exact Gaussian CDF rather than the tanh
/// approximation.
#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// d/dx GELU = Phi(x) + x * phi(x)
#[inline]
pub fn gelu_grad_scalar(x: f64) -> f64 {
    normal_cdf(x) + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Elementwise GELU.
pub fn gelu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| gelu_scalar(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Writes softmax of `row` into `out`, stabilized by max subtraction.
#[inline]
pub fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Row-wise softmax along the last axis of a rank-1 or rank-2 tensor.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numerics("softmax: NaN input".into()));
    }
    let cols = logits.cols();
    let mut out = vec![0.0; logits.len()];
    for r in 0..logits.rows() {
        softmax_row(&logits.data()[r * cols..(r + 1) * cols], &mut out[r * cols..(r + 1) * cols]);
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// log(sum(exp(row))) with max subtraction.
#[inline]
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Cross-entropy of one logit row against a target class:
/// -log softmax(logits)[target].
pub fn cross_entropy(logits: &Tensor, target_class: usize) -> Result<f64> {
    if logits.shape().len() > 2 || logits.rows() != 1 {
        return Err(Error::Numerics("cross_entropy: expected a single logit row".into()));
    }
    let row = logits.data();
    if target_class >= row.len() {
        return Err(Error::Numerics(format!(
            "cross_entropy: target class {target_class} out of range for {} classes",
            row.len()
        )));
    }
    Ok(log_sum_exp(row) - row[target_class])
}
