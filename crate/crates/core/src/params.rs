//! Named parameter storage, initialisation, graph binding and the Adam optimiser.

use indexmap::IndexMap;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, Gradients, Tensor, Var};
use crate::error::{DmaeError, Result};

/// Ordered map of trainable tensors keyed by dotted names such as `mieu.text.w1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| DmaeError::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.shift_remove(name)
    }

    /// Drops every tensor whose name starts with `prefix`; returns how many were removed.
    pub fn remove_prefix(&mut self, prefix: &str) -> usize {
        let before = self.tensors.len();
        self.tensors.retain(|k, _| !k.starts_with(prefix));
        before - self.tensors.len()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
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

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }
}

/// 64-bit FNV-1a, used to derive a per-tensor RNG stream from a tensor name.
fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// RNG for one named tensor. Initial values do not depend on which other
/// tensors exist or the order they are created in.
pub fn tensor_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name))
}

/// Declared shape and initialiser of one trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, init: Init) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
            init,
        }
    }

    pub fn materialize(&self, seed: u64) -> Tensor {
        init_tensor(seed, &self.name, self.rows, self.cols, self.init)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    Normal(f64),
    /// Glorot uniform over `fan_in + fan_out`.
    Glorot,
}

pub fn init_tensor(seed: u64, name: &str, rows: usize, cols: usize, init: Init) -> Tensor {
    let mut rng = tensor_rng(seed, name);
    match init {
        Init::Zeros => Array2::zeros((rows, cols)),
        Init::Constant(c) => Array2::from_elem((rows, cols), c),
        Init::Normal(std) => {
            let normal = Normal::new(0.0, std).expect("std must be finite and positive");
            Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut rng))
        }
        Init::Glorot => {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit))
        }
    }
}

/// A graph together with the parameters bound into it.
pub struct Tape<'p> {
    pub graph: Graph,
    params: &'p ParamStore,
    bound: IndexMap<String, Var>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            graph: Graph::new(),
            params,
            bound: IndexMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    /// Binds a parameter as a differentiable leaf; repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let value = self.params.get(name)?.clone();
        let var = self.graph.leaf(value);
        self.bound.insert(name.to_string(), var);
        Ok(var)
    }

    pub fn bound_names(&self) -> impl Iterator<Item = &str> {
        self.bound.keys().map(String::as_str)
    }

    /// Gradients for every bound parameter; untouched parameters get zeros.
    pub fn param_grads(&self, grads: &Gradients) -> IndexMap<String, Tensor> {
        self.bound
            .iter()
            .map(|(name, var)| {
                let g = grads
                    .get(*var)
                    .cloned()
                    .unwrap_or_else(|| Array2::zeros(self.graph.value(*var).raw_dim()));
                (name.clone(), g)
            })
            .collect()
    }
}

/// Adam with a learning rate supplied per step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: IndexMap<String, Tensor>,
    second: IndexMap<String, Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: IndexMap::new(),
            second: IndexMap::new(),
        }
    }
}

impl Adam {
    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &IndexMap<String, Tensor>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else {
                continue;
            };
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.raw_dim()));
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.raw_dim()));
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        store.insert("w", array![[1.0, -1.0]]);
        let mut grads = IndexMap::new();
        grads.insert("w".to_string(), array![[0.5, -2.0]]);
        let mut adam = Adam::default();
        adam.step(&mut store, &grads, 0.1);
        let w = store.get("w").unwrap();
        assert!((w[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((w[[0, 1]] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_parameter_untouched() {
        let mut store = ParamStore::new();
        store.insert("w", array![[0.25]]);
        let mut grads = IndexMap::new();
        grads.insert("w".to_string(), array![[0.0]]);
        let mut adam = Adam::default();
        for _ in 0..5 {
            adam.step(&mut store, &grads, 0.01);
        }
        assert_eq!(store.get("w").unwrap()[[0, 0]], 0.25);
    }

    #[test]
    fn init_is_independent_of_creation_order() {
        let a = init_tensor(7, "x", 3, 2, Init::Normal(0.01));
        let _ = init_tensor(7, "y", 4, 4, Init::Glorot);
        let b = init_tensor(7, "x", 3, 2, Init::Normal(0.01));
        assert_eq!(a, b);
        assert_ne!(a, init_tensor(8, "x", 3, 2, Init::Normal(0.01)));
    }
}
