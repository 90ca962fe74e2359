//! Fixed-architecture dense networks with reverse-mode gradients.
//!
//! No general autodiff graph: the only composition this repo needs is a
//! stack of dense layers, so forward keeps per-layer inputs and
//! pre-activations and backward replays them in reverse.

use std::collections::BTreeMap;

use crate::error::Error;
use crate::nn::params::{ParamStore, Tensor};
use crate::Result;

/// Pointwise nonlinearity of a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// x * sigmoid(x); used by the denoiser.
    SmoothGate,
    /// max(0, x); used by the classifiers.
    Rectified,
    /// Identity (output layers).
    Linear,
}

impl Activation {
    fn apply(self, z: f32) -> f32 {
        match self {
            Activation::SmoothGate => z * sigmoid(z),
            Activation::Rectified => z.max(0.0),
            Activation::Linear => z,
        }
    }

    fn derivative(self, z: f32) -> f32 {
        match self {
            Activation::SmoothGate => {
                let s = sigmoid(z);
                s + z * s * (1.0 - s)
            }
            Activation::Rectified => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

/// A named stack of dense layers. Parameter names are `{name}.w{i}` /
/// `{name}.b{i}`.
#[derive(Debug, Clone)]
pub struct NetSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

/// Per-layer records kept by forward so backward can rebuild exact
/// gradients: the input each layer saw and its pre-activation.
#[derive(Debug, Clone)]
pub struct Trace {
    net_name: String,
    inputs: Vec<Vec<f32>>,
    pre: Vec<Vec<f32>>,
    output: Vec<f32>,
}

impl Trace {
    pub fn output(&self) -> &[f32] {
        &self.output
    }

    /// Post-activation output of layer `i` (the input of layer `i + 1`).
    pub fn layer_output(&self, i: usize) -> &[f32] {
        if i + 1 < self.inputs.len() {
            &self.inputs[i + 1]
        } else {
            &self.output
        }
    }
}

/// Accumulated parameter gradients, shape-matched to a `ParamStore`.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: BTreeMap<String, Vec<f32>>,
}

impl Gradients {
    pub fn new() -> Self {
        Gradients::default()
    }

    pub fn get(&self, name: &str) -> Option<&[f32]> {
        self.map.get(name).map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f32>)> {
        self.map.iter()
    }

    pub fn accumulate(&mut self, name: &str, len: usize) -> &mut [f32] {
        self.map.entry(name.to_string()).or_insert_with(|| vec![0.0; len])
    }

    /// Scale every accumulated gradient (e.g. 1/batch).
    pub fn scale(&mut self, factor: f32) {
        for v in self.map.values_mut() {
            for g in v.iter_mut() {
                *g *= factor;
            }
        }
    }

    pub fn clear(&mut self) {
        self.map.clear();
    }
}

impl NetSpec {
    /// A dense stack: `dims = [in, h1, ..., out]` with one activation per
    /// layer (so `acts.len() == dims.len() - 1`).
    pub fn dense(name: &str, dims: &[usize], acts: &[Activation]) -> Self {
        assert!(dims.len() >= 2 && acts.len() == dims.len() - 1, "inconsistent net spec");
        let layers = dims
            .windows(2)
            .zip(acts)
            .map(|(w, &activation)| LayerSpec { input: w[0], output: w[1], activation })
            .collect();
        NetSpec { name: name.to_string(), layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    fn w_name(&self, i: usize) -> String {
        format!("{}.w{}", self.name, i)
    }

    fn b_name(&self, i: usize) -> String {
        format!("{}.b{}", self.name, i)
    }

    /// Register this net's parameters in `store`.
    pub fn init_params(&self, store: &mut ParamStore, seed: u64) {
        for (i, layer) in self.layers.iter().enumerate() {
            store.init_dense(&self.w_name(i), &self.b_name(i), layer.input, layer.output, seed);
        }
    }

    /// Total scalar parameter count of this net.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.input * l.output + l.output).sum()
    }

    /// Forward pass. Returns the output and the activation trace needed by
    /// `backward`.
    pub fn forward(&self, params: &ParamStore, input: &[f32]) -> Result<Trace> {
        if input.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("input dim {}", self.input_dim()),
                got: format!("{}", input.len()),
                context: format!("forward through '{}'", self.name),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let w = params.get(&self.w_name(i))?;
            let b = params.get(&self.b_name(i))?;
            debug_assert_eq!(w.shape, vec![layer.output, layer.input]);
            let mut z = vec![0.0f32; layer.output];
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w.data[o * layer.input..(o + 1) * layer.input];
                let mut acc = b.data[o];
                for (wi, xi) in row.iter().zip(x.iter()) {
                    acc += wi * xi;
                }
                *zo = acc;
            }
            let y: Vec<f32> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut x, y));
            pres.push(z);
        }
        Ok(Trace { net_name: self.name.clone(), inputs, pre: pres, output: x })
    }

    /// Reverse-mode pass: accumulates parameter gradients into `grads` and
    /// returns the gradient with respect to the network input.
    pub fn backward(
        &self,
        params: &ParamStore,
        trace: &Trace,
        output_grad: &[f32],
        grads: &mut Gradients,
    ) -> Result<Vec<f32>> {
        if trace.net_name != self.name || trace.inputs.len() != self.layers.len() {
            return Err(Error::InvalidInput(format!(
                "stale trace: built for '{}', replayed through '{}'",
                trace.net_name, self.name
            )));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("output dim {}", self.output_dim()),
                got: format!("{}", output_grad.len()),
                context: format!("backward through '{}'", self.name),
            });
        }
        let mut dy = output_grad.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let w = params.get(&self.w_name(i))?;
            let x = &trace.inputs[i];
            let z = &trace.pre[i];
            // dz = dy ⊙ act'(z)
            let dz: Vec<f32> =
                dy.iter().zip(z.iter()).map(|(&g, &zv)| g * layer.activation.derivative(zv)).collect();
            {
                let dw = grads.accumulate(&self.w_name(i), layer.input * layer.output);
                for (o, &dzo) in dz.iter().enumerate() {
                    let row = &mut dw[o * layer.input..(o + 1) * layer.input];
                    for (ri, xi) in row.iter_mut().zip(x.iter()) {
                        *ri += dzo * xi;
                    }
                }
            }
            {
                let db = grads.accumulate(&self.b_name(i), layer.output);
                for (bo, &dzo) in db.iter_mut().zip(dz.iter()) {
                    *bo += dzo;
                }
            }
            // dx = Wᵀ dz, accumulated row by row to stay cache-friendly
            let mut dx = vec![0.0f32; layer.input];
            for (o, &dzo) in dz.iter().enumerate() {
                if dzo == 0.0 {
                    continue;
                }
                let row = &w.data[o * layer.input..(o + 1) * layer.input];
                for (dxi, wi) in dx.iter_mut().zip(row.iter()) {
                    *dxi += dzo * wi;
                }
            }
            dy = dx;
        }
        Ok(dy)
    }
}

/// Convenience: a tensor view of an embedding-table row.
pub fn embedding_row<'a>(table: &'a Tensor, row: usize) -> &'a [f32] {
    let dim = table.shape[1];
    &table.data[row * dim..(row + 1) * dim]
}
