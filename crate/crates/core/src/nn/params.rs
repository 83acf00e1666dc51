//! Named, ordered parameter storage.

use indexmap::IndexMap;
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("duplicate parameter path `{0}`")]
    Duplicate(String),
    #[error("unknown parameter path `{0}`")]
    Missing(String),
}

/// Trainable tensors keyed by `/`-separated paths such as
/// `encoder/level0/rtb1/rma/qkv/weight`. Iteration follows insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, t: Tensor) -> Result<(), ParamError> {
        let path = path.into();
        if self.params.contains_key(&path) {
            return Err(ParamError::Duplicate(path));
        }
        self.params.insert(path, t);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Result<&Tensor, ParamError> {
        self.params
            .get(path)
            .ok_or_else(|| ParamError::Missing(path.to_string()))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor, ParamError> {
        self.params
            .get_mut(path)
            .ok_or_else(|| ParamError::Missing(path.to_string()))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.params.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Number of tensors.
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Sets every value to zero, keeping paths and shapes.
    pub fn zero_all(&mut self) {
        for t in self.params.values_mut() {
            t.data_mut().fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_insertion_order_and_rejects_duplicates() {
        let mut s = ParamStore::new();
        s.insert("b/weight", Tensor::zeros([2]).unwrap()).unwrap();
        s.insert("a/weight", Tensor::zeros([3]).unwrap()).unwrap();
        assert_eq!(s.paths().collect::<Vec<_>>(), ["b/weight", "a/weight"]);
        assert_eq!(s.num_scalars(), 5);
        assert_eq!(
            s.insert("a/weight", Tensor::zeros([1]).unwrap()),
            Err(ParamError::Duplicate("a/weight".into()))
        );
        assert!(s.get("c").is_err());
    }
}
