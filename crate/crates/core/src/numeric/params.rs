use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::{NumericError, Real, Tensor};

/// Named parameter tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<R: Real = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<R>>,
    index: HashMap<String, usize>,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<R>) -> Result<usize, NumericError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NumericError::DuplicateParam(name));
        }
        let idx = self.names.len();
        self.index.insert(name.clone(), idx);
        self.names.push(name);
        self.tensors.push(t);
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<R>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<R>> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    pub fn tensor(&self, idx: usize) -> &Tensor<R> {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor<R> {
        &mut self.tensors[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<R>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// SHA-256 over the parameters whose name starts with `prefix`.
    pub fn hash_prefix(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter().filter(|(n, _)| n.starts_with(prefix)) {
            h.update((name.len() as u32).to_le_bytes());
            h.update(name.as_bytes());
            h.update((t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                h.update((d as u32).to_le_bytes());
            }
            for &v in t.data() {
                h.update((v.as_f64() as f32).to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// SHA-256 over names, shapes and `f32` values.
    pub fn hash(&self) -> String {
        self.hash_prefix("")
    }
}
