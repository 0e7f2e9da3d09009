//! AdamW with decoupled weight decay and linear learning-rate warmup.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;

/// Optimizer hyperparameters. β1/β2/ε use the customary Adam values;
/// learning rate, weight decay and warmup come from the stage config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Steps of linear warmup; 0 disables warmup.
    pub warmup_steps: u32,
}

impl AdamWConfig {
    pub fn new(learning_rate: f64, weight_decay: f64, warmup_steps: u32) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            warmup_steps,
        }
    }

    /// Effective LR at a (0-based) global step: base · min(1, (step+1)/warmup).
    pub fn effective_lr(&self, global_step: u64) -> f64 {
        if self.warmup_steps == 0 {
            return self.learning_rate;
        }
        let frac = (global_step + 1) as f64 / self.warmup_steps as f64;
        self.learning_rate * frac.min(1.0)
    }
}

struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state for a fixed set of trainable parameters. Parameters
/// not listed at construction (frozen ones) get no moment buffers and
/// are never touched by [`AdamW::step`].
pub struct AdamW {
    config: AdamWConfig,
    /// Completed update count; bias correction uses t = step_count + 1.
    step_count: u64,
    slots: IndexMap<String, Slot>,
}

impl AdamW {
    pub fn new<S: AsRef<str>>(
        config: AdamWConfig,
        trainable: &[S],
        store: &ParamStore,
    ) -> Result<Self> {
        let mut slots = IndexMap::new();
        for name in trainable {
            let name = name.as_ref();
            let len = store.get(name)?.value().len();
            let prev = slots.insert(
                name.to_string(),
                Slot { m: vec![0.0; len], v: vec![0.0; len] },
            );
            if prev.is_some() {
                return Err(Error::Numerics(format!("adamw: duplicate parameter {name:?}")));
            }
        }
        Ok(Self { config, step_count: 0, slots })
    }

    pub fn config(&self) -> AdamWConfig {
        self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    /// Apply one update from the gradients currently held in `store`.
    /// Returns the effective learning rate that was used.
    pub fn step(&mut self, store: &mut ParamStore, global_step: u64) -> Result<f64> {
        let lr = self.config.effective_lr(global_step);
        let t = self.step_count + 1;
        let bias1 = 1.0 - self.config.beta1.powi(t as i32);
        let bias2 = 1.0 - self.config.beta2.powi(t as i32);
        for (name, slot) in &mut self.slots {
            let param = store.get_mut(name)?;
            if param.grad().len() != slot.m.len() {
                return Err(Error::Numerics(format!(
                    "adamw: gradient length changed for {name:?}"
                )));
            }
            for i in 0..slot.m.len() {
                let g = param.grad()[i];
                slot.m[i] = self.config.beta1 * slot.m[i] + (1.0 - self.config.beta1) * g;
                slot.v[i] = self.config.beta2 * slot.v[i] + (1.0 - self.config.beta2) * g * g;
                let m_hat = slot.m[i] / bias1;
                let v_hat = slot.v[i] / bias2;
                let w = param.value().data()[i];
                param.value_mut().data_mut()[i] =
                    w - lr * (m_hat / (v_hat.sqrt() + self.config.eps) + self.config.weight_decay * w);
            }
        }
        self.step_count = t;
        Ok(lr)
    }
}
