//! Losses. Each returns `(value, gradient w.r.t. the first argument)`.

use crate::error::Error;
use crate::Result;

/// Mean squared error over all elements.
pub fn mse(pred: &[f32], target: &[f32]) -> Result<(f32, Vec<f32>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} elements", target.len()),
            got: format!("{}", pred.len()),
            context: "mse".into(),
        });
    }
    let n = pred.len() as f32;
    let mut value = 0.0f64;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target.iter()) {
        let d = p - t;
        value += (d as f64) * (d as f64);
        grad.push(2.0 * d / n);
    }
    Ok(((value / n as f64) as f32, grad))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Cross entropy of a single label against raw logits, via log-sum-exp.
/// Gradient is `softmax(logits) - onehot(label)`.
pub fn cross_entropy(logits: &[f32], label: usize) -> Result<(f32, Vec<f32>)> {
    if label >= logits.len() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let lse = max + logits.iter().map(|&l| ((l - max) as f64).exp()).sum::<f64>().ln() as f32;
    let value = lse - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((value, grad))
}

/// `1 - cos(a, b)`; gradient is taken with respect to `a`.
pub fn cosine_loss(a: &[f32], b: &[f32]) -> Result<(f32, Vec<f32>)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} elements", b.len()),
            got: format!("{}", a.len()),
            context: "cosine_loss".into(),
        });
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine_loss of a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b.iter()).map(|(&x, &y)| x as f64 * y as f64).sum();
    let cos = dot / (na * nb);
    // d(1-cos)/da_i = -(b_i/(|a||b|) - cos * a_i/|a|²)
    let grad: Vec<f32> = a
        .iter()
        .zip(b.iter())
        .map(|(&ai, &bi)| (-(bi as f64 / (na * nb) - cos * ai as f64 / (na * na))) as f32)
        .collect();
    Ok(((1.0 - cos) as f32, grad))
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_of_identical_inputs_is_zero() {
        let x = [0.5, -2.0, 3.25];
        let (v, g) = mse(&x, &x).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&gi| gi == 0.0));
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_k() {
        let logits = [0.7f32; 6];
        let (v, g) = cross_entropy(&logits, 3).unwrap();
        assert!((v - (6.0f32).ln()).abs() < 1e-6, "{v}");
        // gradient sums to zero: softmax sums to 1, minus the onehot
        let s: f32 = g.iter().sum();
        assert!(s.abs() < 1e-6);
    }

    #[test]
    fn cosine_loss_identical_and_orthogonal() {
        let x = [0.3f32, 1.0, -0.5];
        let (v, _) = cosine_loss(&x, &x).unwrap();
        assert!(v.abs() < 1e-6);
        let (v, _) = cosine_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
        // anti-parallel hits the upper bound of 2
        let (v, _) = cosine_loss(&[1.0, 0.0], &[-1.0, 0.0]).unwrap();
        assert!((v - 2.0).abs() < 1e-6);
    }

    #[test]
    fn cosine_loss_zero_vector_errors() {
        assert!(cosine_loss(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine_loss(&[1.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        // f64 re-implementations differentiated numerically.
        let a = [0.4f32, -1.2, 0.9, 2.0];
        let b = [1.0f32, 0.3, -0.7, 0.5];
        let h = 1e-4f64;

        let (_, g) = mse(&a, &b).unwrap();
        for i in 0..a.len() {
            let eval = |delta: f64| {
                let mut s = 0.0f64;
                for j in 0..a.len() {
                    let aj = a[j] as f64 + if i == j { delta } else { 0.0 };
                    let d = aj - b[j] as f64;
                    s += d * d;
                }
                s / a.len() as f64
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((g[i] as f64 - fd).abs() < 1e-5, "mse coord {i}");
        }

        let (_, g) = cosine_loss(&a, &b).unwrap();
        for i in 0..a.len() {
            let eval = |delta: f64| {
                let av: Vec<f64> =
                    a.iter().enumerate().map(|(j, &x)| x as f64 + if i == j { delta } else { 0.0 }).collect();
                let bv: Vec<f64> = b.iter().map(|&x| x as f64).collect();
                let dot: f64 = av.iter().zip(&bv).map(|(x, y)| x * y).sum();
                let na = av.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = bv.iter().map(|x| x * x).sum::<f64>().sqrt();
                1.0 - dot / (na * nb)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((g[i] as f64 - fd).abs() < 1e-5, "cosine coord {i}");
        }

        let logits = [0.2f32, -0.5, 1.3];
        let (_, g) = cross_entropy(&logits, 2).unwrap();
        for i in 0..logits.len() {
            let eval = |delta: f64| {
                let lv: Vec<f64> = logits
                    .iter()
                    .enumerate()
                    .map(|(j, &x)| x as f64 + if i == j { delta } else { 0.0 })
                    .collect();
                let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + lv.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
                lse - lv[2]
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((g[i] as f64 - fd).abs() < 1e-5, "xent coord {i}");
        }
    }
}
