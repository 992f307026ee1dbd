use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::{NumericsError, Result, Scalar, Tensor};

/// Name and shape of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Ordered, named collection of parameter tensors.
///
/// Tensors are shared through `Arc` so binding them into a [`crate::Graph`]
/// never copies; updates go through copy-on-write.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<S>>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Appends a tensor and returns its index.
    pub fn push(&mut self, name: impl Into<String>, t: Tensor<S>) -> usize {
        self.names.push(name.into());
        self.tensors.push(Arc::new(t));
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, i: usize) -> &Tensor<S> {
        &self.tensors[i]
    }

    pub fn shared(&self, i: usize) -> Arc<Tensor<S>> {
        Arc::clone(&self.tensors[i])
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<S> {
        Arc::make_mut(&mut self.tensors[i])
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor<S>> {
        Ok(self.get(self.index_of(name)?))
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| ParamSpec {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter().map(|t| t.as_ref()))
    }

    pub fn tensors(&self) -> Vec<Tensor<S>> {
        self.tensors.iter().map(|t| t.as_ref().clone()).collect()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Arc::new(t.cast())).collect(),
        }
    }

    /// Concatenates another store after this one.
    pub fn extend(&mut self, other: &ParamStore<S>) {
        self.names.extend(other.names.iter().cloned());
        self.tensors.extend(other.tensors.iter().cloned());
    }

    /// SHA-256 over names, shapes, and the little-endian bytes of every
    /// value (as f64 so the digest is precision-independent for f32 stores).
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.as_f64().to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
