//! Finite-difference validation of reverse-mode gradients on every network
//! shape used in the repo.
//!
//! The oracle is an independent f64 re-implementation of the forward pass
//! and loss, differentiated by central differences (h = 1e-3). f32 forward
//! evaluations cannot certify a 1e-4 relative tolerance, so the oracle runs
//! entirely in f64 on the same parameter values.

use rand::Rng;
use timbrelab::nn::{mse, Activation, Gradients, NetSpec, ParamStore};
use timbrelab::rng;

struct F64Net {
    dims: Vec<usize>,
    acts: Vec<Activation>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl F64Net {
    fn from_params(spec: &NetSpec, params: &ParamStore, name: &str) -> F64Net {
        let mut dims = vec![spec.layers[0].input];
        let mut acts = Vec::new();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, layer) in spec.layers.iter().enumerate() {
            dims.push(layer.output);
            acts.push(layer.activation);
            weights.push(
                params.get(&format!("{name}.w{i}")).unwrap().data.iter().map(|&v| v as f64).collect(),
            );
            biases.push(
                params.get(&format!("{name}.b{i}")).unwrap().data.iter().map(|&v| v as f64).collect(),
            );
        }
        F64Net { dims, acts, weights, biases }
    }

    fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        for l in 0..self.acts.len() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let mut y = vec![0.0f64; n_out];
            for o in 0..n_out {
                let mut acc = self.biases[l][o];
                for i in 0..n_in {
                    acc += self.weights[l][o * n_in + i] * x[i];
                }
                y[o] = match self.acts[l] {
                    Activation::SmoothGate => acc / (1.0 + (-acc).exp()),
                    Activation::Rectified => acc.max(0.0),
                    Activation::Linear => acc,
                };
            }
            x = y;
        }
        x
    }

    fn loss(&self, input: &[f64], target: &[f64]) -> f64 {
        let out = self.forward(input);
        out.iter().zip(target.iter()).map(|(o, t)| (o - t) * (o - t)).sum::<f64>()
            / target.len() as f64
    }

    fn perturbed(&self, layer: usize, index: usize, is_bias: bool, delta: f64) -> F64Net {
        let mut copy = F64Net {
            dims: self.dims.clone(),
            acts: self.acts.clone(),
            weights: self.weights.clone(),
            biases: self.biases.clone(),
        };
        if is_bias {
            copy.biases[layer][index] += delta;
        } else {
            copy.weights[layer][index] += delta;
        }
        copy
    }
}

/// Check one net shape on one seed. Exhaustive over coordinates when the
/// net is small, sampled otherwise; failures must stay under 1% either way.
fn check_shape(tag: &str, dims: &[usize], acts: &[Activation], seed: u64, max_coords: usize) {
    let spec = NetSpec::dense(tag, dims, acts);
    let mut params = ParamStore::new();
    spec.init_params(&mut params, seed);

    let mut r = rng::stream(seed, "fd_input");
    let input: Vec<f32> = (0..dims[0]).map(|_| r.gen_range(-1.0..1.0)).collect();
    let target: Vec<f32> = (0..dims[dims.len() - 1]).map(|_| r.gen_range(-1.0..1.0)).collect();

    let trace = spec.forward(&params, &input).unwrap();
    let (_, dout) = mse(trace.output(), &target).unwrap();
    let mut grads = Gradients::new();
    spec.backward(&params, &trace, &dout, &mut grads).unwrap();

    let oracle = F64Net::from_params(&spec, &params, tag);
    let input64: Vec<f64> = input.iter().map(|&v| v as f64).collect();
    let target64: Vec<f64> = target.iter().map(|&v| v as f64).collect();

    // enumerate all (layer, index, is_bias) coordinates
    let mut coords = Vec::new();
    for (l, layer) in spec.layers.iter().enumerate() {
        for i in 0..layer.input * layer.output {
            coords.push((l, i, false));
        }
        for i in 0..layer.output {
            coords.push((l, i, true));
        }
    }
    let total = coords.len();
    if total > max_coords {
        let mut pick = rng::stream(seed, "fd_coords");
        let mut sampled = Vec::with_capacity(max_coords);
        for _ in 0..max_coords {
            sampled.push(coords[pick.gen_range(0..total)]);
        }
        coords = sampled;
    }

    let h = 1e-3;
    let mut checked = 0usize;
    let mut failures = 0usize;
    for (layer, index, is_bias) in coords {
        let plus = oracle.perturbed(layer, index, is_bias, h).loss(&input64, &target64);
        let minus = oracle.perturbed(layer, index, is_bias, -h).loss(&input64, &target64);
        let fd = (plus - minus) / (2.0 * h);
        let name = if is_bias { format!("{tag}.b{layer}") } else { format!("{tag}.w{layer}") };
        let got = grads.get(&name).unwrap()[index] as f64;
        // relative error with an absolute floor for near-zero gradients
        let denom = fd.abs().max(1e-4);
        if (got - fd).abs() / denom > 1e-4 {
            failures += 1;
        }
        checked += 1;
    }
    assert!(
        (failures as f64) < 0.01 * checked as f64 + 1.0,
        "{tag} seed {seed}: {failures}/{checked} coordinates off"
    );
}

#[test]
fn denoiser_shape_gradients_match_finite_differences() {
    let dims = [112usize, 256, 256, 64];
    let acts = [Activation::SmoothGate, Activation::SmoothGate, Activation::Linear];
    for seed in [1u64, 2, 3] {
        check_shape("denoiser_fd", &dims, &acts, seed, 2000);
    }
}

#[test]
fn teacher_shape_gradients_match_finite_differences() {
    let dims = [1024usize, 256, 128, 6];
    let acts = [Activation::Rectified, Activation::Rectified, Activation::Linear];
    for seed in [1u64, 2, 3] {
        check_shape("teacher_fd", &dims, &acts, seed, 2000);
    }
}

#[test]
fn student_shape_gradients_match_finite_differences() {
    let dims = [64usize, 128, 128];
    let acts = [Activation::Rectified, Activation::Linear];
    for seed in [1u64, 2, 3] {
        check_shape("student_fd", &dims, &acts, seed, 4000);
    }
}

#[test]
fn head_shape_gradients_match_finite_differences() {
    let dims = [128usize, 6];
    let acts = [Activation::Linear];
    for seed in [1u64, 2, 3] {
        // small enough to check exhaustively
        check_shape("head_fd", &dims, &acts, seed, usize::MAX);
    }
}
