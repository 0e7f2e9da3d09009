//! Finite-difference verification of reverse-mode gradients.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tape::{NodeId, Tape};

pub const GRAD_CHECK_EPS: f64 = 1e-5;

/// Compare the tape gradient of a scalar function against central
/// differences, coordinate by coordinate, over every parameter in the
/// store. Returns the maximum relative error
/// `|a − n| / max(1e-8, |a| + |n|)`.
///
/// `f` must rebuild the same computation from the store's current
/// values on every call — in particular any dropout masks must be
/// fixed, not redrawn.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<NodeId>,
{
    let eval = |store: &ParamStore, f: &mut F| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(store, &mut tape)?;
        let v = tape.value(loss);
        if v.len() != 1 {
            return Err(Error::Numerics("grad_check: function is not scalar".into()));
        }
        let y = v.item();
        if !y.is_finite() {
            return Err(Error::Numerics(format!("grad_check: non-finite value {y}")));
        }
        Ok(y)
    };

    // Analytic pass.
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = f(store, &mut tape)?;
    if tape.value(loss).len() != 1 {
        return Err(Error::Numerics("grad_check: function is not scalar".into()));
    }
    if !tape.value(loss).item().is_finite() {
        return Err(Error::Numerics("grad_check: non-finite value".into()));
    }
    tape.backward(loss)?;
    tape.accumulate_into(store)?;
    let analytic: IndexMap<String, Vec<f64>> = store
        .iter()
        .map(|(name, p)| (name.to_string(), p.grad().to_vec()))
        .collect();

    // Numeric pass: perturb one coordinate at a time.
    let mut max_rel = 0.0f64;
    for (name, grad) in &analytic {
        for i in 0..grad.len() {
            let original = store.get(name)?.value().data()[i];
            store.get_mut(name)?.value_mut().data_mut()[i] = original + eps;
            let f_plus = eval(store, &mut f)?;
            store.get_mut(name)?.value_mut().data_mut()[i] = original - eps;
            let f_minus = eval(store, &mut f)?;
            store.get_mut(name)?.value_mut().data_mut()[i] = original;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = grad[i];
            let rel = (a - numeric).abs() / (1e-8f64).max(a.abs() + numeric.abs());
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;
    use crate::rng::Rng;

    #[test]
    fn quadratic_is_exact_under_central_differences() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::new(vec![1, 1], vec![3.0]).unwrap()).unwrap();
        let err = grad_check(&mut store, GRAD_CHECK_EPS, |s, t| {
            let w = t.param(s, "w")?;
            t.matmul(w, w)
        })
        .unwrap();
        assert!(err < 1e-7, "rel error {err}");
        // and the analytic gradient itself is 2w = 6
        assert!((store.get("w").unwrap().grad()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_over_linear_layer() {
        let mut rng = Rng::new(7);
        let mut store = ParamStore::new();
        let w: Vec<f64> = (0..12).map(|_| 0.5 * rng.normal()).collect();
        let b: Vec<f64> = (0..3).map(|_| 0.1 * rng.normal()).collect();
        store.insert("w", Tensor::matrix(4, 3, w).unwrap()).unwrap();
        store.insert("b", Tensor::new(vec![3], b).unwrap()).unwrap();
        let x: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
        let xt = Tensor::matrix(2, 4, x).unwrap();

        let err = grad_check(&mut store, GRAD_CHECK_EPS, move |s, t| {
            let w = t.param(s, "w")?;
            let b = t.param(s, "b")?;
            let x = t.constant(xt.clone());
            let h = t.matmul(x, w)?;
            let logits = t.add_row(h, b)?;
            t.cross_entropy_mean(logits, &[Some(0), Some(2)])
        })
        .unwrap();
        assert!(err < 1e-6, "rel error {err}");
    }

    #[test]
    fn every_op_used_by_the_model_passes_in_isolation() {
        // One composite graph touching each op with gradient flow:
        // gather → matmul → transpose → add/add_row → scale → mask_add →
        // gelu → layer_norm → softmax → slices → concats → dropout →
        // cross-entropy → weighted sum.
        let mut rng = Rng::new(11);
        let mut store = ParamStore::new();
        let emb: Vec<f64> = (0..20).map(|_| 0.7 * rng.normal()).collect();
        store.insert("emb", Tensor::matrix(5, 4, emb).unwrap()).unwrap();
        let w: Vec<f64> = (0..16).map(|_| 0.5 * rng.normal()).collect();
        store.insert("w", Tensor::matrix(4, 4, w).unwrap()).unwrap();
        store.insert("gain", Tensor::new(vec![4], vec![1.1, 0.9, 1.0, 1.2]).unwrap()).unwrap();
        store.insert("bias", Tensor::new(vec![4], vec![0.1, -0.2, 0.0, 0.3]).unwrap()).unwrap();
        let mask_bias = vec![0.0, 0.0, -1e9, 0.0, 0.0, 0.0, 0.0, -1e9, 0.0, 0.0, 0.0, 0.0];
        let drop_mask = vec![2.0, 0.0, 2.0, 2.0, 0.0, 2.0, 2.0, 2.0, 2.0, 0.0, 2.0, 2.0];

        let err = grad_check(&mut store, GRAD_CHECK_EPS, move |s, t| {
            let emb = t.param(s, "emb")?;
            let w = t.param(s, "w")?;
            let gain = t.param(s, "gain")?;
            let bias = t.param(s, "bias")?;

            let x = t.gather_rows(emb, &[0, 2, 4])?; // [3 x 4]
            let h = t.matmul(x, w)?; // [3 x 4]
            let ht = t.transpose(h); // [4 x 3]
            let h = t.transpose(ht); // [3 x 4]
            let h = t.add(h, x)?;
            let h = t.add_row(h, bias)?;
            let h = t.scale(h, 0.5);
            let h = t.mask_add(h, &mask_bias)?;
            let h = t.gelu(h);
            let h = t.layer_norm(h, gain, bias)?;
            let sm = t.softmax_rows(h)?; // [3 x 4]

            let top = t.slice_rows(sm, 0, 2)?; // [2 x 4]
            let bottom = t.slice_rows(sm, 2, 1)?; // [1 x 4]
            let h = t.concat_rows(&[top, bottom])?; // [3 x 4]
            let left = t.slice_cols(h, 0, 2)?;
            let right = t.slice_cols(h, 2, 2)?;
            let h = t.concat_cols(&[left, right])?; // [3 x 4]
            let h = t.dropout_with_mask(h, drop_mask.clone())?;

            let ce = t.cross_entropy_mean(h, &[Some(1), None, Some(3)])?;
            t.weighted_sum(&[(ce, 0.7), (ce, 0.3)])
        })
        .unwrap();
        assert!(err < 1e-6, "rel error {err}");
    }

    #[test]
    fn layer_norm_gradient_in_isolation() {
        let mut rng = Rng::new(3);
        let mut store = ParamStore::new();
        let x: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        store.insert("x", Tensor::matrix(3, 4, x).unwrap()).unwrap();
        store.insert("g", Tensor::new(vec![4], vec![1.5, 0.5, -0.8, 1.0]).unwrap()).unwrap();
        store.insert("b", Tensor::new(vec![4], vec![0.0, 0.1, -0.1, 0.2]).unwrap()).unwrap();
        let err = grad_check(&mut store, GRAD_CHECK_EPS, |s, t| {
            let x = t.param(s, "x")?;
            let g = t.param(s, "g")?;
            let b = t.param(s, "b")?;
            let y = t.layer_norm(x, g, b)?;
            // Reduce to a scalar with uneven weights so every output
            // coordinate carries a distinct gradient.
            let probe: Vec<f64> = (0..12).map(|i| 0.3 + 0.1 * i as f64).collect();
            let p = t.constant(Tensor::matrix(4, 3, probe).unwrap());
            let z = t.matmul(y, p)?; // [3 x 3]
            let z = t.softmax_rows(z)?;
            t.cross_entropy_mean(z, &[Some(0), Some(1), Some(2)])
        })
        .unwrap();
        assert!(err < 1e-6, "rel error {err}");
    }

    #[test]
    fn non_finite_function_is_an_error() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::new(vec![1, 1], vec![1e200]).unwrap()).unwrap();
        let res = grad_check(&mut store, GRAD_CHECK_EPS, |s, t| {
            let w = t.param(s, "w")?;
            let sq = t.matmul(w, w)?; // 1e400 overflows to inf
            Ok(sq)
        });
        assert!(res.is_err());
    }
}
