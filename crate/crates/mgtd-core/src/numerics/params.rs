//! Named trainable parameters with gradient accumulation buffers.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// One trainable array plus its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter {
    value: Tensor,
    grad: Vec<f64>,
}

impl Parameter {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }
}

/// Ordered map of all trainable parameters of a model. Registration
/// order is deterministic and defines the checkpoint payload layout.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: IndexMap<String, Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Numerics(format!("duplicate parameter name {name:?}")));
        }
        let grad = vec![0.0; value.len()];
        self.params.insert(name.to_string(), Parameter { value, grad });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Parameter> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Numerics(format!("unknown parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Numerics(format!("unknown parameter {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn total_len(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn add_grad(&mut self, name: &str, delta: &[f64]) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.grad.len() != delta.len() {
            return Err(Error::Numerics(format!(
                "gradient length mismatch for {name:?}: {} vs {}",
                p.grad.len(),
                delta.len()
            )));
        }
        for (g, d) in p.grad.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_rejects_duplicates() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(vec![2])).unwrap();
        assert!(s.insert("w", Tensor::zeros(vec![2])).is_err());
    }

    #[test]
    fn grads_accumulate_and_reset() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(vec![2])).unwrap();
        s.add_grad("w", &[1.0, 2.0]).unwrap();
        s.add_grad("w", &[0.5, 0.5]).unwrap();
        assert_eq!(s.get("w").unwrap().grad(), &[1.5, 2.5]);
        s.zero_grads();
        assert_eq!(s.get("w").unwrap().grad(), &[0.0, 0.0]);
    }

    #[test]
    fn registration_order_is_preserved() {
        let mut s = ParamStore::new();
        s.insert("b", Tensor::zeros(vec![1])).unwrap();
        s.insert("a", Tensor::zeros(vec![1])).unwrap();
        let names: Vec<_> = s.names().collect();
        assert_eq!(names, vec!["b", "a"]);
    }
}
