//! Named parameter storage.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::Error;
use crate::rng;
use crate::Result;

/// A shaped, flat f32 array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(Error::ShapeMismatch {
                expected: format!("{shape:?} = {want} elements"),
                got: format!("{} elements", data.len()),
                context: "tensor construction".into(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Named flat f32 arrays with a shape registry.
///
/// Iteration order is the lexicographic name order (BTreeMap), which makes
/// optimizer sweeps and checkpoint bytes reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    arrays: BTreeMap<String, Tensor>,
    /// Format/version tag carried into checkpoints.
    pub version: u32,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { arrays: BTreeMap::new(), version: 1 }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        self.arrays.insert(name.to_string(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.arrays
            .get_mut(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.arrays.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.arrays.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.arrays.keys().cloned().collect()
    }

    /// Exact total number of scalar parameters.
    pub fn total_params(&self) -> usize {
        self.arrays.values().map(|t| t.len()).sum()
    }

    /// Register a dense weight matrix `[out, in]` initialized uniform
    /// ±sqrt(6/(fan_in+fan_out)) from the RNG stream named after the
    /// parameter, plus a zero bias `[out]`.
    pub fn init_dense(&mut self, w_name: &str, b_name: &str, fan_in: usize, fan_out: usize, seed: u64) {
        let bound = (6.0 / (fan_in + fan_out) as f32).sqrt();
        let mut r = rng::stream(seed, w_name);
        let data: Vec<f32> = (0..fan_in * fan_out).map(|_| r.gen_range(-bound..bound)).collect();
        self.insert(w_name, Tensor { shape: vec![fan_out, fan_in], data });
        self.insert(b_name, Tensor::zeros(vec![fan_out]));
    }

    /// Register an embedding table `[rows, dim]` with the same init scheme.
    pub fn init_embedding(&mut self, name: &str, rows: usize, dim: usize, seed: u64) {
        let bound = (6.0 / (rows + dim) as f32).sqrt();
        let mut r = rng::stream(seed, name);
        let data: Vec<f32> = (0..rows * dim).map(|_| r.gen_range(-bound..bound)).collect();
        self.insert(name, Tensor { shape: vec![rows, dim], data });
    }

    /// Bitwise equality of two stores (names, shapes, and f32 bits).
    pub fn bit_equal(&self, other: &ParamStore) -> bool {
        if self.arrays.len() != other.arrays.len() {
            return false;
        }
        self.arrays.iter().zip(other.arrays.iter()).all(|((na, ta), (nb, tb))| {
            na == nb
                && ta.shape == tb.shape
                && ta.data.iter().zip(tb.data.iter()).all(|(a, b)| a.to_bits() == b.to_bits())
        })
    }
}
