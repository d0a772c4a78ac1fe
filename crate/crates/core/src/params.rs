//! Named, ordered store of trainable tensors.
//!
//! Parameter names are hierarchical dotted paths ("level1.fcam.filter.b0").
//! Iteration order is the sorted name order, which keeps optimizer updates,
//! checkpoint layout, and random initialization deterministic.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Element> {
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        let name = name.into();
        debug_assert!(tensor.grad_enabled(), "parameter {name} must be grad-enabled");
        self.entries.insert(name, tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries.get(name).ok_or_else(|| Error::InvalidConfig(format!(
            "missing parameter '{name}'"
        )))
    }

    /// Swap in an updated value for an existing parameter.
    pub fn replace(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let slot = self.entries.get_mut(name).ok_or_else(|| {
            Error::InvalidConfig(format!("cannot replace unknown parameter '{name}'"))
        })?;
        if slot.shape() != tensor.shape() {
            return Err(Error::ShapeMismatch {
                op: "ParamStore::replace",
                detail: format!(
                    "parameter '{name}': {:?} vs {:?}",
                    slot.shape(),
                    tensor.shape()
                ),
            });
        }
        *slot = tensor;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of trainable scalars across all entries.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replace_rejects_shape_change() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::param_from_vec(vec![1.0, 2.0], &[2]).unwrap());
        let err = store
            .replace("w", Tensor::param_from_vec(vec![1.0], &[1]).unwrap())
            .unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn iteration_is_name_sorted() {
        let mut store = ParamStore::<f64>::new();
        store.insert("b", Tensor::param_scalar(1.0));
        store.insert("a", Tensor::param_scalar(2.0));
        let names: Vec<_> = store.iter().map(|(n, _)| n.to_string()).collect();
        assert_eq!(names, ["a", "b"]);
        assert_eq!(store.scalar_count(), 2);
    }
}
