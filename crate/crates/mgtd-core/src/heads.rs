//! Classification heads: small dense stacks that turn a [CLS] vector
//! into class logits. One head per task; all of them share the encoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tape::{NodeId, Tape};
use crate::numerics::tensor::Tensor;
use crate::rng::{derive_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CchConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub dropout_p: f64,
    pub n_hidden_layers: usize,
    pub seed: u64,
}

impl CchConfig {
    /// Defaults: hidden width equal to the input, two hidden blocks,
    /// dropout 0.5.
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: input_dim,
            num_classes,
            dropout_p: 0.5,
            n_hidden_layers: 2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Heads("input_dim and hidden_dim must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Heads(format!("num_classes {} < 2", self.num_classes)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Heads(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }
}

/// A (Dense → GELU → Dropout)ⁿ → Dense stack. Parameters live in an
/// external [`ParamStore`] under `{prefix}/…` names so several heads can
/// share one store with the encoder.
#[derive(Debug, Clone)]
pub struct CchHead {
    prefix: String,
    config: CchConfig,
}

impl CchHead {
    pub fn new(prefix: impl Into<String>, config: CchConfig) -> Result<Self> {
        config.validate()?;
        let prefix = prefix.into();
        if prefix.is_empty() {
            return Err(Error::Heads("head prefix must be non-empty".into()));
        }
        Ok(Self { prefix, config })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn config(&self) -> &CchConfig {
        &self.config
    }

    fn dims(&self, block: usize) -> (usize, usize) {
        let cfg = &self.config;
        let d_in = if block == 0 { cfg.input_dim } else { cfg.hidden_dim };
        (d_in, cfg.hidden_dim)
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.config.n_hidden_layers {
            names.push(format!("{}/h{i}/w", self.prefix));
            names.push(format!("{}/h{i}/b", self.prefix));
        }
        names.push(format!("{}/out/w", self.prefix));
        names.push(format!("{}/out/b", self.prefix));
        names
    }

    /// Insert freshly initialized parameters: He-style normal(0,
    /// √(2/fan_in)) weights so activations keep O(1) scale through the
    /// narrow GELU stack, zero biases. Deterministic given the config
    /// seed and prefix.
    pub fn init_params(&self, store: &mut ParamStore) -> Result<()> {
        let cfg = &self.config;
        let mut rng = Rng::new(derive_seed(cfg.seed, &format!("{}/init", self.prefix)));
        let dense = |rows: usize, cols: usize, rng: &mut Rng| -> Tensor {
            let std = (2.0 / rows as f64).sqrt();
            let data = (0..rows * cols).map(|_| std * rng.normal()).collect();
            Tensor::matrix(rows, cols, data).expect("consistent dims")
        };
        for i in 0..cfg.n_hidden_layers {
            let (d_in, d_out) = self.dims(i);
            store.insert(&format!("{}/h{i}/w", self.prefix), dense(d_in, d_out, &mut rng))?;
            store.insert(&format!("{}/h{i}/b", self.prefix), Tensor::zeros(vec![d_out]))?;
        }
        let last_dim = if cfg.n_hidden_layers == 0 { cfg.input_dim } else { cfg.hidden_dim };
        store.insert(
            &format!("{}/out/w", self.prefix),
            dense(last_dim, cfg.num_classes, &mut rng),
        )?;
        store.insert(&format!("{}/out/b", self.prefix), Tensor::zeros(vec![cfg.num_classes]))?;
        Ok(())
    }

    /// Map a `[batch × input_dim]` node to `[batch × num_classes]`
    /// logits. `dropout` carries the training RNG; `None` is eval mode.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: NodeId,
        mut dropout: Option<&mut Rng>,
    ) -> Result<NodeId> {
        let cfg = &self.config;
        if tape.value(input).cols() != cfg.input_dim {
            return Err(Error::Heads(format!(
                "head {} expects {} input columns, got {}",
                self.prefix,
                cfg.input_dim,
                tape.value(input).cols()
            )));
        }
        let mut x = input;
        for i in 0..cfg.n_hidden_layers {
            let w = tape.param(store, &format!("{}/h{i}/w", self.prefix))?;
            let b = tape.param(store, &format!("{}/h{i}/b", self.prefix))?;
            x = tape.matmul(x, w)?;
            x = tape.add_row(x, b)?;
            x = tape.gelu(x);
            if let Some(rng) = dropout.as_deref_mut() {
                x = tape.dropout(x, cfg.dropout_p, rng);
            }
        }
        let w = tape.param(store, &format!("{}/out/w", self.prefix))?;
        let b = tape.param(store, &format!("{}/out/b", self.prefix))?;
        let logits = tape.matmul(x, w)?;
        tape.add_row(logits, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::functions::softmax_row;
    use crate::numerics::grad_check::{grad_check, GRAD_CHECK_EPS};

    fn tiny_head() -> CchHead {
        let mut cfg = CchConfig::new(4, 3);
        cfg.hidden_dim = 6;
        cfg.seed = 7;
        CchHead::new("head/test", cfg).unwrap()
    }

    fn input_node(tape: &mut Tape, rows: usize) -> NodeId {
        let data: Vec<f64> = (0..rows * 4).map(|i| 0.3 * ((i as f64 * 0.7).sin())).collect();
        tape.constant(Tensor::matrix(rows, 4, data).unwrap())
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = CchConfig::new(64, 2);
        assert_eq!(cfg.hidden_dim, 64);
        assert_eq!(cfg.n_hidden_layers, 2);
        assert_eq!(cfg.dropout_p, 0.5);
        assert!(cfg.validate().is_ok());

        let mut bad = CchConfig::new(64, 1);
        assert!(bad.validate().is_err());
        bad = CchConfig::new(64, 2);
        bad.dropout_p = 1.0;
        assert!(bad.validate().is_err());
        assert!(CchHead::new("", CchConfig::new(4, 2)).is_err());
    }

    #[test]
    fn forward_shape_and_param_inventory() {
        let head = tiny_head();
        let mut store = ParamStore::new();
        head.init_params(&mut store).unwrap();
        assert_eq!(store.len(), head.param_names().len());
        assert_eq!(store.get("head/test/h0/w").unwrap().value().shape(), &[4, 6]);
        assert_eq!(store.get("head/test/h1/w").unwrap().value().shape(), &[6, 6]);
        assert_eq!(store.get("head/test/out/w").unwrap().value().shape(), &[6, 3]);

        let mut tape = Tape::new();
        let input = input_node(&mut tape, 5);
        let logits = head.forward(&mut tape, &store, input, None).unwrap();
        assert_eq!(tape.value(logits).shape(), &[5, 3]);
    }

    #[test]
    fn zero_weights_give_uniform_class_probabilities() {
        let head = tiny_head();
        let mut store = ParamStore::new();
        head.init_params(&mut store).unwrap();
        for name in head.param_names() {
            for x in store.get_mut(&name).unwrap().value_mut().data_mut() {
                *x = 0.0;
            }
        }
        let mut tape = Tape::new();
        let input = input_node(&mut tape, 2);
        let logits = head.forward(&mut tape, &store, input, None).unwrap();
        let mut probs = vec![0.0; 3];
        for row in tape.value(logits).data().chunks_exact(3) {
            assert!(row.iter().all(|&v| v == 0.0));
            softmax_row(row, &mut probs);
            for &p in &probs {
                assert!((p - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_prefixes_coexist() {
        let head = tiny_head();
        let mut a = ParamStore::new();
        head.init_params(&mut a).unwrap();
        let mut b = ParamStore::new();
        head.init_params(&mut b).unwrap();
        for name in head.param_names() {
            assert_eq!(a.get(&name).unwrap().value().data(), b.get(&name).unwrap().value().data());
        }

        let other = CchHead::new("head/other", CchConfig::new(4, 2)).unwrap();
        other.init_params(&mut a).unwrap();
        assert_eq!(a.len(), head.param_names().len() + other.param_names().len());
    }

    #[test]
    fn dropout_expectation_matches_eval_output() {
        // Small weights keep the GELUs near-linear so the Jensen gap
        // stays inside the tolerance; the test then checks that inverted
        // dropout is unbiased, not that GELU is linear.
        let mut cfg = CchConfig::new(4, 3);
        cfg.hidden_dim = 6;
        cfg.seed = 13;
        let head = CchHead::new("head/test", cfg).unwrap();
        let mut store = ParamStore::new();
        head.init_params(&mut store).unwrap();
        let mut wrng = Rng::new(5);
        for name in head.param_names() {
            if name.ends_with("/w") {
                for x in store.get_mut(&name).unwrap().value_mut().data_mut() {
                    *x = 0.15 * wrng.normal();
                }
            }
        }

        let mut tape = Tape::new();
        let input = input_node(&mut tape, 1);
        let eval = head.forward(&mut tape, &store, input, None).unwrap();
        let eval_logits = tape.value(eval).data().to_vec();

        let n_masks = 20_000;
        let mut rng = Rng::new(99);
        let mut mean = vec![0.0; eval_logits.len()];
        for _ in 0..n_masks {
            let mut tape = Tape::new();
            let input = input_node(&mut tape, 1);
            let out = head.forward(&mut tape, &store, input, Some(&mut rng)).unwrap();
            for (m, &v) in mean.iter_mut().zip(tape.value(out).data()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n_masks as f64;
        }
        for (m, e) in mean.iter().zip(&eval_logits) {
            let tol = 0.02 * (e.abs() + 0.05);
            assert!(
                (m - e).abs() <= tol,
                "dropout expectation {m} vs eval {e} beyond {tol}"
            );
        }
    }

    #[test]
    fn head_gradient_check() {
        let head = tiny_head();
        let mut store = ParamStore::new();
        head.init_params(&mut store).unwrap();
        // healthy parameter scale; production init leaves gradients near
        // the f64 noise floor of the central difference
        let mut rng = Rng::new(21);
        let names: Vec<String> = store.names().map(String::from).collect();
        for name in names {
            for x in store.get_mut(&name).unwrap().value_mut().data_mut() {
                *x = 0.4 * rng.normal();
            }
        }
        let head2 = head.clone();
        let err = grad_check(&mut store, GRAD_CHECK_EPS, move |s, t| {
            let input = input_node(t, 4);
            let logits = head2.forward(t, s, input, None)?;
            t.cross_entropy_mean(logits, &[Some(0), Some(2), None, Some(1)])
        })
        .unwrap();
        assert!(err < 1e-5, "head grad check failed: {err}");
    }

    #[test]
    fn rejects_input_dim_mismatch() {
        let head = tiny_head();
        let mut store = ParamStore::new();
        head.init_params(&mut store).unwrap();
        let mut tape = Tape::new();
        let bad = tape.constant(Tensor::matrix(2, 5, vec![0.0; 10]).unwrap());
        assert!(head.forward(&mut tape, &store, bad, None).is_err());
    }
}
