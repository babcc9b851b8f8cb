//! Named parameter storage shared by every encoder.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};


pub type Tensor = ArrayD<f64>;

/// A set of parameter paths, ordered so iteration is deterministic.
pub type ParamSet = BTreeSet<String>;

/// Every learnable or frozen array of the model, keyed by a stable path
/// (`shared.block2.conv1.weight`, `prompt.tokens`, ...).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor) {
        self.tensors.insert(path.into(), value);
    }

    /// Panics on an unknown path: lookups are only issued by encoders for
    /// paths they registered themselves.
    pub fn get(&self, path: &str) -> &Tensor {
        self.tensors
            .get(path)
            .unwrap_or_else(|| panic!("unknown parameter path {path}"))
    }

    pub fn try_get(&self, path: &str) -> Option<&Tensor> {
        self.tensors.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> &mut Tensor {
        self.tensors
            .get_mut(path)
            .unwrap_or_else(|| panic!("unknown parameter path {path}"))
    }

    pub fn remove(&mut self, path: &str) -> Option<Tensor> {
        self.tensors.remove(path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.tensors.contains_key(path)
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Paths starting with `prefix.`.
    pub fn paths_with_prefix(&self, prefix: &str) -> ParamSet {
        let dotted = format!("{prefix}.");
        self.tensors
            .keys()
            .filter(|k| k.starts_with(&dotted))
            .cloned()
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Raw little-endian bytes of one tensor, used for bitwise comparisons.
    pub fn bytes_of(&self, path: &str) -> Vec<u8> {
        self.get(path)
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect()
    }
}

/// Gradient accumulator mirroring a subset of [`ParamStore`] paths.
#[derive(Debug, Clone, Default)]
pub struct Grads {
    tensors: BTreeMap<String, Tensor>,
}

impl Grads {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `value` into the slot for `path`, creating it when absent.
    pub fn accumulate(&mut self, path: &str, shape: &[usize], value: &[f64]) {
        let slot = self
            .tensors
            .entry(path.to_string())
            .or_insert_with(|| Tensor::zeros(IxDyn(shape)));
        debug_assert_eq!(slot.len(), value.len(), "gradient size for {path}");
        let dst = slot.as_slice_mut().expect("standard layout");
        for (d, v) in dst.iter_mut().zip(value) {
            *d += *v;
        }
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.tensors.get(path)
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Sum of squares over every accumulated entry.
    pub fn squared_norm(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum()
    }
}

/// Which parameters an encoder backward pass should write gradients for.
#[derive(Debug, Clone, Copy)]
pub struct GradSink<'a> {
    pub trainable: &'a ParamSet,
}

impl GradSink<'_> {
    pub fn wants(&self, path: &str) -> bool {
        self.trainable.contains(path)
    }
}

pub(crate) fn normal_tensor<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    Tensor::from_shape_vec(IxDyn(shape), data).expect("shape matches data")
}
