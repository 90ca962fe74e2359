//! Evaluation: chroma distance, instrument accuracy, a kernel two-sample
//! distance on classifier embeddings, and the full pairwise edit matrix.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::Serialize;

use crate::classify::{LatentClassifier, Prediction, TeacherClassifier};
use crate::corpus::{instrument_name, NUM_CLASSES};
use crate::diffusion::{DenoiserNet, NoiseSchedule};
use crate::dsp::{self, Chromagram, MelFilterbank, MelStats, PATCH_FRAMES};
use crate::edit::{
    last_change_with_confidence, online_with_confidence, probe_trajectory, regenerate_with_swap,
    select_timestep_midpoint, select_timestep_random, FallbackPolicy, Strategy, SwapStatus,
};
use crate::error::Error;
use crate::latent::{decode, LatentStats};
use crate::rng;
use crate::Result;

/// A set of embedding vectors under one tag (corpus split or generated
/// batch).
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    pub rows: Vec<Vec<f32>>,
    pub tag: String,
}

impl EmbeddingSet {
    pub fn new(rows: Vec<Vec<f32>>, tag: &str) -> Result<Self> {
        if let Some(first) = rows.first() {
            let dim = first.len();
            for (i, r) in rows.iter().enumerate() {
                if r.len() != dim {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{dim}"),
                        got: format!("{}", r.len()),
                        context: format!("embedding row {i} of '{tag}'"),
                    });
                }
                if !r.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite(format!("embedding row {i} of '{tag}'")));
                }
            }
        }
        Ok(EmbeddingSet { rows, tag: tag.to_string() })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Mean over frames of (1 - cosine) between per-frame chroma profiles.
/// A frame pair contributes 0 when both frames are silent and 1 when
/// exactly one is.
pub fn chroma_distance(a: &Chromagram, b: &Chromagram) -> Result<f64> {
    if a.frames != b.frames {
        return Err(Error::ShapeMismatch {
            expected: format!("{} frames", a.frames),
            got: format!("{} frames", b.frames),
            context: "chroma distance".into(),
        });
    }
    let mut total = 0.0f64;
    for m in 0..a.frames {
        let (ra, rb) = (a.row(m), b.row(m));
        // identical frames are exactly distance zero
        if ra.iter().zip(rb.iter()).all(|(x, y)| x.to_bits() == y.to_bits()) {
            continue;
        }
        let na: f64 = ra.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        let nb: f64 = rb.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        total += match (na > 0.0, nb > 0.0) {
            (false, false) => 0.0,
            (true, true) => {
                let dot: f64 = ra.iter().zip(rb.iter()).map(|(&x, &y)| x as f64 * y as f64).sum();
                (1.0 - dot / (na * nb)).clamp(0.0, 1.0)
            }
            _ => 1.0,
        };
    }
    Ok(total / a.frames as f64)
}

/// Chroma distance between two equal-length audio clips.
pub fn chroma_distance_clips(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} samples", a.len()),
            got: format!("{} samples", b.len()),
            context: "chroma distance of clips".into(),
        });
    }
    chroma_distance(&dsp::chromagram(&dsp::stft(a)?), &dsp::chromagram(&dsp::stft(b)?))
}

/// Fraction of predictions matching their targets.
pub fn instrument_accuracy(predictions: &[Prediction], targets: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "accuracy needs matching non-empty lists, got {} vs {}",
            predictions.len(),
            targets.len()
        )));
    }
    let correct = predictions.iter().zip(targets.iter()).filter(|(p, &t)| p.class_id == t).count();
    Ok(correct as f64 / targets.len() as f64)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct KadConfig {
    /// Kernel bandwidth; `None` uses the median pairwise distance over the
    /// pooled sets.
    pub bandwidth: Option<f64>,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x as f64 - y as f64) * (x as f64 - y as f64)).sum()
}

/// Deterministic, order-insensitive sum: sort then accumulate.
fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    values.iter().sum()
}

/// 100x the unbiased quadratic-time squared kernel discrepancy between two
/// embedding sets, Gaussian kernel exp(-d²/(2σ²)). May be slightly negative
/// (unbiased estimator). Exactly symmetric in its arguments.
pub fn kad(x: &EmbeddingSet, y: &EmbeddingSet, config: &KadConfig) -> Result<f64> {
    let (m, n) = (x.len(), y.len());
    if m < 2 || n < 2 {
        return Err(Error::InvalidInput(format!(
            "kernel distance needs at least 2 samples per set, got {m} and {n}"
        )));
    }
    let sigma = match config.bandwidth {
        Some(b) => {
            if b <= 0.0 {
                return Err(Error::InvalidInput("bandwidth must be positive".into()));
            }
            b
        }
        None => {
            // median pairwise distance over the pooled set
            let pooled: Vec<&Vec<f32>> = x.rows.iter().chain(y.rows.iter()).collect();
            let mut dists = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
            for i in 0..pooled.len() {
                for j in i + 1..pooled.len() {
                    dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
                }
            }
            dists.sort_unstable_by(|a, b| a.total_cmp(b));
            let median = if dists.len() % 2 == 1 {
                dists[dists.len() / 2]
            } else {
                0.5 * (dists[dists.len() / 2 - 1] + dists[dists.len() / 2])
            };
            if median == 0.0 {
                return Err(Error::Degenerate(
                    "median pairwise distance is zero; sets are degenerate".into(),
                ));
            }
            median
        }
    };
    let k = |a: &[f32], b: &[f32]| (-sq_dist(a, b) / (2.0 * sigma * sigma)).exp();

    let mut kxx = Vec::with_capacity(m * (m - 1));
    for i in 0..m {
        for j in 0..m {
            if i != j {
                kxx.push(k(&x.rows[i], &x.rows[j]));
            }
        }
    }
    let mut kyy = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kyy.push(k(&y.rows[i], &y.rows[j]));
            }
        }
    }
    let mut kxy = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            kxy.push(k(&x.rows[i], &y.rows[j]));
        }
    }
    let term_xx = sorted_sum(kxx) / (m * (m - 1)) as f64;
    let term_yy = sorted_sum(kyy) / (n * (n - 1)) as f64;
    let term_xy = sorted_sum(kxy) / (m * n) as f64;
    // (xx + yy) keeps f64 addition commutative under argument swap
    Ok(100.0 * ((term_xx + term_yy) - 2.0 * term_xy))
}

/// Matrix evaluation settings.
#[derive(Debug, Clone)]
pub struct MatrixConfig {
    pub seeds_per_pair: usize,
    pub strategies: Vec<Strategy>,
    pub guidance: f32,
    pub fallback: FallbackPolicy,
    pub min_confidence: f32,
    pub eval_seed: u64,
    pub workers: usize,
    pub config_hash: String,
}

/// Everything the matrix needs, borrowed from trained artifacts.
pub struct MatrixInputs<'a> {
    pub net: &'a DenoiserNet,
    pub schedule: &'a NoiseSchedule,
    pub probe: &'a LatentClassifier,
    pub teacher: &'a TeacherClassifier,
    pub fb: &'a MelFilterbank,
    pub mel_stats: &'a MelStats,
    pub latent_stats: &'a LatentStats,
    /// Per-class reference embedding sets (teacher features of training
    /// clips of that instrument).
    pub references: &'a [EmbeddingSet],
}

#[derive(Debug, Clone, Serialize)]
pub struct RowDetail {
    pub source: usize,
    pub target: usize,
    pub seed_index: usize,
    pub row_seed: u64,
    pub strategy: String,
    pub t_star: Option<usize>,
    pub status: String,
    pub chroma: Option<f64>,
    pub predicted: Option<usize>,
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategyRow {
    pub strategy: String,
    pub chroma: f64,
    pub kad: f64,
    pub inst_acc: f64,
    pub rows: usize,
    pub no_change: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub strategies: Vec<StrategyRow>,
    pub rows: Vec<RowDetail>,
    pub config_hash: String,
    pub eval_seed: u64,
}

impl MetricsReport {
    /// One row per strategy; column order Chroma, KAD, Inst. Acc.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,chroma,kad,inst_acc\n");
        for row in &self.strategies {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                row.strategy, row.chroma, row.kad, row.inst_acc
            ));
        }
        out
    }

    pub fn strategy(&self, name: &str) -> Option<&StrategyRow> {
        self.strategies.iter().find(|s| s.strategy == name)
    }

    pub fn write(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        if let Some(dir) = csv_path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = std::fs::File::create(csv_path)?;
        f.write_all(self.to_csv().as_bytes())?;
        std::fs::write(json_path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

struct UnitOutcome {
    details: Vec<RowDetail>,
    /// (strategy index, target, embedding) per successful edit
    embeddings: Vec<(usize, usize, Vec<f32>)>,
}

/// Evaluate one (source, target, seed) unit: probe once, then apply every
/// strategy to the shared trace.
fn eval_unit(
    inputs: &MatrixInputs,
    cfg: &MatrixConfig,
    source: usize,
    target: usize,
    seed_index: usize,
    row_seed: u64,
) -> Result<UnitOutcome> {
    let probe_fn = |z: &crate::latent::Latent| -> Prediction {
        inputs.probe.predict(z).expect("latent classifier forward cannot fail on fixed shapes")
    };
    let source_traj = probe_trajectory(
        inputs.net,
        inputs.schedule,
        &probe_fn,
        row_seed,
        source,
        cfg.guidance,
    )?;
    let trace: Vec<Prediction> =
        source_traj.steps.iter().map(|s| s.prediction.clone().unwrap()).collect();
    let source_patch = decode(source_traj.output(), inputs.latent_stats);
    let source_chroma = dsp::chromagram(&dsp::patch_to_spectrogram(
        &source_patch,
        inputs.fb,
        inputs.mel_stats,
        PATCH_FRAMES,
    ));

    let mut details = Vec::new();
    let mut embeddings = Vec::new();
    for (si, strategy) in cfg.strategies.iter().enumerate() {
        let selected = match strategy {
            Strategy::LastChange => last_change_with_confidence(&trace, cfg.min_confidence),
            Strategy::Online { window } => {
                online_with_confidence(&trace, *window, cfg.min_confidence)
            }
            Strategy::Random => {
                let mut r = rng::stream(row_seed, "random_swap_step");
                Some(select_timestep_random(&mut r))
            }
            Strategy::Midpoint => Some(select_timestep_midpoint()),
        };
        let resolved = match selected {
            Some(t) => Some((t, SwapStatus::Selected)),
            None => match cfg.fallback {
                FallbackPolicy::Midpoint => {
                    Some((select_timestep_midpoint(), SwapStatus::NoChangeFallback))
                }
                FallbackPolicy::Error => None,
            },
        };
        let Some((t_star, status)) = resolved else {
            details.push(RowDetail {
                source,
                target,
                seed_index,
                row_seed,
                strategy: strategy.name().to_string(),
                t_star: None,
                status: SwapStatus::NoChangeError.name().to_string(),
                chroma: None,
                predicted: None,
                correct: None,
            });
            continue;
        };
        let edited = regenerate_with_swap(
            inputs.net,
            inputs.schedule,
            row_seed,
            source,
            target,
            t_star,
            cfg.guidance,
        )?;
        let patch = decode(edited.output(), inputs.latent_stats);
        let spec =
            dsp::patch_to_spectrogram(&patch, inputs.fb, inputs.mel_stats, PATCH_FRAMES);
        let chroma = chroma_distance(&dsp::chromagram(&spec), &source_chroma)?;
        let pred = inputs.teacher.predict_patch(&patch)?;
        let feats = inputs.teacher.features(&patch.values)?;
        embeddings.push((si, target, feats));
        details.push(RowDetail {
            source,
            target,
            seed_index,
            row_seed,
            strategy: strategy.name().to_string(),
            t_star: Some(t_star),
            status: status.name().to_string(),
            chroma: Some(chroma),
            predicted: Some(pred.class_id),
            correct: Some(pred.class_id == target),
        });
    }
    Ok(UnitOutcome { details, embeddings })
}

/// Run the full ordered-pair matrix: every (source, target) pair,
/// `seeds_per_pair` seeds each, every strategy on the shared pass-1
/// trajectory. Rows run concurrently when `workers > 1`; aggregation order
/// is fixed, so reports are byte-stable regardless of worker count.
pub fn run_matrix(inputs: &MatrixInputs, cfg: &MatrixConfig) -> Result<MetricsReport> {
    let mut units = Vec::new();
    let mut pair_idx = 0u64;
    for source in 0..NUM_CLASSES {
        for target in 0..NUM_CLASSES {
            if source == target {
                continue;
            }
            for seed_index in 0..cfg.seeds_per_pair {
                let row_seed: u64 = rng::stream_indexed(
                    cfg.eval_seed,
                    "matrix_row",
                    pair_idx * 10000 + seed_index as u64,
                )
                .gen();
                units.push((source, target, seed_index, row_seed));
            }
            pair_idx += 1;
        }
    }

    let workers = cfg.workers.max(1);
    let mut outcomes: Vec<Option<Result<UnitOutcome>>> = Vec::new();
    outcomes.resize_with(units.len(), || None);
    if workers == 1 {
        for (i, &(s, t, si, seed)) in units.iter().enumerate() {
            outcomes[i] = Some(eval_unit(inputs, cfg, s, t, si, seed));
        }
    } else {
        let chunk = units.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (w, unit_chunk) in units.chunks(chunk).enumerate() {
                let handle = scope.spawn(move || {
                    unit_chunk
                        .iter()
                        .map(|&(s, t, si, seed)| eval_unit(inputs, cfg, s, t, si, seed))
                        .collect::<Vec<_>>()
                });
                handles.push((w, handle));
            }
            for (w, handle) in handles {
                for (j, r) in handle.join().expect("matrix worker panicked").into_iter().enumerate()
                {
                    outcomes[w * chunk + j] = Some(r);
                }
            }
        });
    }

    let mut rows = Vec::new();
    let mut per_strategy_embeddings: Vec<Vec<Vec<Vec<f32>>>> =
        vec![vec![Vec::new(); NUM_CLASSES]; cfg.strategies.len()];
    for outcome in outcomes.into_iter().flatten() {
        let outcome = outcome?;
        rows.extend(outcome.details);
        for (si, target, emb) in outcome.embeddings {
            per_strategy_embeddings[si][target].push(emb);
        }
    }

    let mut strategies = Vec::new();
    for (si, strategy) in cfg.strategies.iter().enumerate() {
        let name = strategy.name().to_string();
        let mine: Vec<&RowDetail> = rows.iter().filter(|r| r.strategy == name).collect();
        let scored: Vec<&&RowDetail> = mine.iter().filter(|r| r.chroma.is_some()).collect();
        let chroma = if scored.is_empty() {
            f64::NAN
        } else {
            scored.iter().map(|r| r.chroma.unwrap()).sum::<f64>() / scored.len() as f64
        };
        let acc = if scored.is_empty() {
            f64::NAN
        } else {
            scored.iter().filter(|r| r.correct == Some(true)).count() as f64 / scored.len() as f64
        };
        let mut kad_sum = 0.0f64;
        let mut kad_n = 0usize;
        for target in 0..NUM_CLASSES {
            let edited_rows = &per_strategy_embeddings[si][target];
            if edited_rows.len() >= 2 && inputs.references[target].len() >= 2 {
                let edited = EmbeddingSet::new(
                    edited_rows.clone(),
                    &format!("edited_{name}_{}", instrument_name(target)),
                )?;
                kad_sum += kad(&edited, &inputs.references[target], &KadConfig::default())?;
                kad_n += 1;
            }
        }
        let kad_mean = if kad_n > 0 { kad_sum / kad_n as f64 } else { f64::NAN };
        let no_change = mine.iter().filter(|r| r.status != "selected").count();
        strategies.push(StrategyRow {
            strategy: name,
            chroma,
            kad: kad_mean,
            inst_acc: acc,
            rows: mine.len(),
            no_change,
        });
    }

    Ok(MetricsReport {
        strategies,
        rows,
        config_hash: cfg.config_hash.clone(),
        eval_seed: cfg.eval_seed,
    })
}
