//! Analytic encoder/decoder between 32x32 mel patches and the 64-dim
//! diffusion latent: 4x4 average pooling down to an 8x8 grid, flattened
//! row-major, whitened per coordinate with training-split stats.

use crate::dsp::{MelPatch, MEL_BANDS, PATCH_FRAMES};
use crate::error::Error;
use crate::Result;

pub const LATENT_DIM: usize = 64;
pub const GRID: usize = 8;
pub const BLOCK: usize = 4;

/// A point in the diffusion state space.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub values: [f32; LATENT_DIM],
}

impl Latent {
    pub fn zeros() -> Self {
        Latent { values: [0.0; LATENT_DIM] }
    }

    pub fn from_slice(v: &[f32]) -> Self {
        let mut values = [0.0; LATENT_DIM];
        values.copy_from_slice(v);
        Latent { values }
    }

    pub fn l2_norm(&self) -> f32 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt() as f32
    }

    pub fn l2_distance(&self, other: &Latent) -> f32 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(&a, &b)| ((a - b) as f64) * ((a - b) as f64))
            .sum::<f64>()
            .sqrt() as f32
    }

    pub fn bit_equal(&self, other: &Latent) -> bool {
        self.values.iter().zip(other.values.iter()).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Per-coordinate whitening stats over the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStats {
    pub mean: [f32; LATENT_DIM],
    pub std: [f32; LATENT_DIM],
}

/// 4x4 block means of a patch, flattened row-major to 64 values
/// (unwhitened). Each block is summed as a balanced tree so pooling a
/// block-constant patch reproduces the block value exactly.
pub fn pool(patch: &MelPatch) -> [f32; LATENT_DIM] {
    let mut out = [0.0f32; LATENT_DIM];
    for br in 0..GRID {
        for bc in 0..GRID {
            let mut rows = [0.0f32; BLOCK];
            for (i, r) in rows.iter_mut().enumerate() {
                let band = br * BLOCK + i;
                let f0 = bc * BLOCK;
                let a = patch.at(band, f0);
                let b = patch.at(band, f0 + 1);
                let c = patch.at(band, f0 + 2);
                let d = patch.at(band, f0 + 3);
                *r = (a + b) + (c + d);
            }
            let sum = (rows[0] + rows[1]) + (rows[2] + rows[3]);
            out[br * GRID + bc] = sum * 0.0625;
        }
    }
    out
}

/// Pool and whiten a patch into the latent space.
pub fn encode(patch: &MelPatch, stats: &LatentStats) -> Latent {
    let pooled = pool(patch);
    let mut values = [0.0f32; LATENT_DIM];
    for i in 0..LATENT_DIM {
        values[i] = ((pooled[i] as f64 - stats.mean[i] as f64) / stats.std[i] as f64) as f32;
    }
    Latent { values }
}

/// Unwhiten and nearest-neighbor upsample a latent back to a 32x32 patch.
pub fn decode(latent: &Latent, stats: &LatentStats) -> MelPatch {
    let mut values = vec![0.0f32; MEL_BANDS * PATCH_FRAMES];
    for br in 0..GRID {
        for bc in 0..GRID {
            let i = br * GRID + bc;
            let v = (latent.values[i] as f64 * stats.std[i] as f64 + stats.mean[i] as f64) as f32;
            for r in 0..BLOCK {
                for c in 0..BLOCK {
                    values[(br * BLOCK + r) * PATCH_FRAMES + bc * BLOCK + c] = v;
                }
            }
        }
    }
    MelPatch { values }
}

/// Fit per-coordinate whitening stats over pooled training patches.
pub fn fit_stats(patches: &[MelPatch]) -> Result<LatentStats> {
    if patches.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 clips to fit latent stats".into()));
    }
    let mut sum = [0.0f64; LATENT_DIM];
    let mut sumsq = [0.0f64; LATENT_DIM];
    for p in patches {
        let pooled = pool(p);
        for i in 0..LATENT_DIM {
            sum[i] += pooled[i] as f64;
            sumsq[i] += pooled[i] as f64 * pooled[i] as f64;
        }
    }
    let n = patches.len() as f64;
    let mut mean = [0.0f32; LATENT_DIM];
    let mut std = [0.0f32; LATENT_DIM];
    for i in 0..LATENT_DIM {
        let m = sum[i] / n;
        let var = (sumsq[i] / n - m * m).max(0.0);
        if var == 0.0 {
            return Err(Error::Degenerate(format!("latent coordinate {i} has zero variance")));
        }
        mean[i] = m as f32;
        std[i] = var.sqrt() as f32;
    }
    Ok(LatentStats { mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn synthetic_stats() -> LatentStats {
        let mut mean = [0.0f32; LATENT_DIM];
        let mut std = [0.0f32; LATENT_DIM];
        let mut r = rng::stream(5, "latent_test_stats");
        for i in 0..LATENT_DIM {
            mean[i] = r.gen_range(-3.0..3.0);
            std[i] = r.gen_range(0.5..2.0);
        }
        LatentStats { mean, std }
    }

    fn random_patch(seed: u64) -> MelPatch {
        let mut r = rng::stream(seed, "latent_test_patch");
        MelPatch { values: (0..MEL_BANDS * PATCH_FRAMES).map(|_| r.gen_range(-4.0..4.0)).collect() }
    }

    #[test]
    fn block_constant_patch_encodes_to_whitened_block_values() {
        let stats = synthetic_stats();
        let mut block_vals = [0.0f32; LATENT_DIM];
        let mut r = rng::stream(2, "blockvals");
        for v in block_vals.iter_mut() {
            *v = r.gen_range(-2.0..2.0);
        }
        let mut values = vec![0.0f32; MEL_BANDS * PATCH_FRAMES];
        for band in 0..MEL_BANDS {
            for frame in 0..PATCH_FRAMES {
                values[band * PATCH_FRAMES + frame] = block_vals[(band / 4) * 8 + frame / 4];
            }
        }
        let latent = encode(&MelPatch { values }, &stats);
        for i in 0..LATENT_DIM {
            let want =
                ((block_vals[i] as f64 - stats.mean[i] as f64) / stats.std[i] as f64) as f32;
            assert_eq!(latent.values[i].to_bits(), want.to_bits(), "coord {i}");
        }
    }

    #[test]
    fn constant_patch_encodes_to_per_coordinate_whitened_constant() {
        let stats = synthetic_stats();
        let v = 1.25f32;
        let patch = MelPatch { values: vec![v; MEL_BANDS * PATCH_FRAMES] };
        let latent = encode(&patch, &stats);
        for i in 0..LATENT_DIM {
            let want = ((v as f64 - stats.mean[i] as f64) / stats.std[i] as f64) as f32;
            assert_eq!(latent.values[i].to_bits(), want.to_bits());
        }
    }

    #[test]
    fn pooling_matches_direct_mean_oracle() {
        let patch = random_patch(3);
        let pooled = pool(&patch);
        for br in 0..GRID {
            for bc in 0..GRID {
                let mut acc = 0.0f64;
                for r in 0..BLOCK {
                    for c in 0..BLOCK {
                        acc += patch.at(br * BLOCK + r, bc * BLOCK + c) as f64;
                    }
                }
                let oracle = (acc / 16.0) as f32;
                assert!(
                    (pooled[br * GRID + bc] - oracle).abs() < 1e-6,
                    "block ({br},{bc})"
                );
            }
        }
    }

    #[test]
    fn encode_of_decode_recovers_the_latent() {
        let stats = synthetic_stats();
        let mut r = rng::stream(7, "roundtrip");
        for _ in 0..50 {
            let mut z = [0.0f32; LATENT_DIM];
            for v in z.iter_mut() {
                *v = r.gen_range(-3.0..3.0);
            }
            let z = Latent { values: z };
            let back = encode(&decode(&z, &stats), &stats);
            for i in 0..LATENT_DIM {
                assert!(
                    (back.values[i] - z.values[i]).abs() <= 1e-5,
                    "coord {i}: {} vs {}",
                    back.values[i],
                    z.values[i]
                );
            }
        }
    }

    #[test]
    fn decode_of_encode_is_blockwise_mean_broadcast() {
        let stats = synthetic_stats();
        let patch = random_patch(9);
        let decoded = decode(&encode(&patch, &stats), &stats);
        let pooled = pool(&patch);
        let mut err_sq = 0.0f64;
        let mut within_var = 0.0f64;
        for band in 0..MEL_BANDS {
            for frame in 0..PATCH_FRAMES {
                let mean = pooled[(band / 4) * 8 + frame / 4];
                assert!((decoded.at(band, frame) - mean).abs() < 1e-5);
                let d = (patch.at(band, frame) - decoded.at(band, frame)) as f64;
                err_sq += d * d;
                let w = (patch.at(band, frame) - mean) as f64;
                within_var += w * w;
            }
        }
        assert!((err_sq - within_var).abs() <= 1e-3 * within_var.max(1.0));
    }

    #[test]
    fn zero_latent_decodes_to_the_means() {
        let stats = synthetic_stats();
        let decoded = decode(&Latent::zeros(), &stats);
        for br in 0..GRID {
            for bc in 0..GRID {
                let want = stats.mean[br * GRID + bc];
                assert!((decoded.at(br * 4, bc * 4) - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identical_clips_make_stats_degenerate() {
        let p = random_patch(1);
        match fit_stats(&[p.clone(), p]) {
            Err(Error::Degenerate(_)) => {}
            other => panic!("expected degenerate stats error, got {other:?}"),
        }
    }

    #[test]
    fn fitted_stats_whiten_their_own_population() {
        let patches: Vec<MelPatch> = (0..40).map(|i| random_patch(100 + i)).collect();
        let stats = fit_stats(&patches).unwrap();
        let mut mean = [0.0f64; LATENT_DIM];
        let mut var = [0.0f64; LATENT_DIM];
        for p in &patches {
            let z = encode(p, &stats);
            for i in 0..LATENT_DIM {
                mean[i] += z.values[i] as f64;
                var[i] += (z.values[i] as f64) * (z.values[i] as f64);
            }
        }
        for i in 0..LATENT_DIM {
            let m = mean[i] / patches.len() as f64;
            let s = (var[i] / patches.len() as f64 - m * m).sqrt();
            assert!(m.abs() < 0.05, "coord {i} mean {m}");
            assert!((s - 1.0).abs() < 0.1, "coord {i} std {s}");
        }
    }
}
