use std::collections::BTreeMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::{Tensor, TensorError};

/// Named parameter tensors. Iteration order is the sorted name order, which
/// fixes checkpoint layout and reduction order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

/// Per-parameter gradient buffers keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients(BTreeMap<String, Vec<f64>>);

impl Gradients {
    pub fn insert(&mut self, name: String, g: Vec<f64>) {
        self.0.insert(name, g);
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.0.get(name).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.0.iter()
    }

    /// `self += scale * other`, adding missing entries.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (name, g) in &other.0 {
            let buf = self.0.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            buf.iter_mut().zip(g).for_each(|(a, b)| *a += scale * b);
        }
    }
}

impl ParamStore {
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Glorot-uniform weight of the given shape; fan-in/out from the last two
    /// axes (times the receptive field for 4-d conv kernels).
    pub fn init_uniform(&mut self, name: &str, shape: &[usize], rng: &mut impl Rng) {
        let (fan_in, fan_out) = match shape.len() {
            1 => (shape[0], shape[0]),
            2 => (shape[0], shape[1]),
            4 => {
                let rf = shape[2] * shape[3];
                (shape[1] * rf, shape[0] * rf)
            }
            _ => {
                let n: usize = shape.iter().product();
                (n, n)
            }
        };
        let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
        self.insert(
            name,
            Tensor::new(shape, data).expect("length matches shape").with_grad(),
        );
    }

    pub fn init_const(&mut self, name: &str, shape: &[usize], v: f64) {
        self.insert(name, Tensor::full(shape, v).with_grad());
    }

    /// Mark every parameter whose name starts with `prefix` as (un)trainable.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for (name, t) in &mut self.tensors {
            if name.starts_with(prefix) {
                t.requires_grad = trainable;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for t in self.tensors.values_mut() {
            t.grad = None;
        }
    }

    /// Add gradients into the per-tensor buffers. Frozen tensors are skipped.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<(), TensorError> {
        for (name, g) in grads.iter() {
            let t = self
                .tensors
                .get_mut(name)
                .ok_or_else(|| TensorError::UnknownParam(name.clone()))?;
            if !t.requires_grad {
                continue;
            }
            let n = t.numel();
            let buf = t.grad.get_or_insert_with(|| vec![0.0; n]);
            buf.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and raw values (little-endian).
    pub fn content_hash(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.tensors.iter().filter(|(n, _)| n.starts_with(prefix)) {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        crate::fgparser::hex(&h.finalize())
    }

    /// Keep only parameters whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .map(|(n, t)| (n.clone(), t.clone()))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: ParamStore) {
        self.tensors.extend(other.tensors);
    }
}
