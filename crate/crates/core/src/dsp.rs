//! Deterministic signal transforms: STFT, log-mel patches, chromagram,
//! Griffin-Lim reconstruction, and grayscale PNG export.
//!
//! Fixed geometry throughout: 8 kHz audio, 512-sample Hann window, hop 256,
//! 257 magnitude bins, 32 mel bands over 0-4000 Hz, and 32 time frames per
//! patch. All transforms are pure functions once the filterbank and
//! normalization stats are constructed.

use std::path::Path;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};

use crate::error::Error;
use crate::rng;
use crate::Result;

pub const SAMPLE_RATE: u32 = 8000;
pub const WINDOW: usize = 512;
pub const HOP: usize = 256;
pub const BINS: usize = WINDOW / 2 + 1;
pub const MEL_BANDS: usize = 32;
pub const PATCH_FRAMES: usize = 32;
pub const PATCH_CELLS: usize = MEL_BANDS * PATCH_FRAMES;
/// Floor added before the log when compressing mel energies.
pub const LOG_FLOOR: f32 = 1e-5;
/// Bins below this frequency are DC/leakage noise and never enter the
/// chromagram.
pub const CHROMA_MIN_HZ: f32 = 30.0;

/// Magnitude spectrogram, `frames x bins`, all entries >= 0.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub frames: usize,
    pub data: Vec<f32>,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn row(&self, frame: usize) -> &[f32] {
        &self.data[frame * BINS..(frame + 1) * BINS]
    }
}

/// Normalized 32x32 log-mel image, row-major `[mel band][time frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelPatch {
    pub values: Vec<f32>,
}

impl MelPatch {
    pub fn at(&self, band: usize, frame: usize) -> f32 {
        self.values[band * PATCH_FRAMES + frame]
    }
}

/// Per-frame pitch-class energy profile, `frames x 12`, rows L2-normalized
/// (silent frames stay zero).
#[derive(Debug, Clone)]
pub struct Chromagram {
    pub frames: usize,
    pub data: Vec<f32>,
}

impl Chromagram {
    pub fn row(&self, frame: usize) -> &[f32] {
        &self.data[frame * 12..(frame + 1) * 12]
    }
}

/// Corpus-level scalar normalization stats for log-mel patches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelStats {
    pub mean: f32,
    pub std: f32,
}

impl MelStats {
    pub fn fit(raw_patches: &[Vec<f32>]) -> Result<MelStats> {
        let mut n = 0u64;
        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        for p in raw_patches {
            for &v in p {
                n += 1;
                sum += v as f64;
                sumsq += (v as f64) * (v as f64);
            }
        }
        if n < 2 {
            return Err(Error::InvalidInput("need at least one patch to fit mel stats".into()));
        }
        let mean = sum / n as f64;
        let var = (sumsq / n as f64 - mean * mean).max(0.0);
        if var == 0.0 {
            return Err(Error::Degenerate("mel stats: zero variance".into()));
        }
        Ok(MelStats { mean: mean as f32, std: var.sqrt() as f32 })
    }
}

fn fft_forward() -> Arc<dyn Fft<f32>> {
    static F: OnceLock<Arc<dyn Fft<f32>>> = OnceLock::new();
    F.get_or_init(|| FftPlanner::new().plan_fft_forward(WINDOW)).clone()
}

fn fft_inverse() -> Arc<dyn Fft<f32>> {
    static F: OnceLock<Arc<dyn Fft<f32>>> = OnceLock::new();
    F.get_or_init(|| FftPlanner::new().plan_fft_inverse(WINDOW)).clone()
}

/// Periodic Hann window.
fn hann() -> &'static [f32; WINDOW] {
    static W: OnceLock<[f32; WINDOW]> = OnceLock::new();
    W.get_or_init(|| {
        let mut w = [0.0f32; WINDOW];
        for (n, wn) in w.iter_mut().enumerate() {
            *wn = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / WINDOW as f64).cos()) as f32;
        }
        w
    })
}

pub fn num_frames(len: usize) -> usize {
    len / HOP + 1
}

/// Sample at a possibly out-of-range index under reflection padding.
fn reflect(samples: &[f32], idx: isize) -> f32 {
    let len = samples.len() as isize;
    let mut i = idx;
    if i < 0 {
        i = -i;
    }
    if i >= len {
        i = 2 * (len - 1) - i;
    }
    samples[i as usize]
}

fn frame_complex(samples: &[f32], frame: usize, out: &mut [Complex32]) {
    let w = hann();
    let center = (frame * HOP) as isize;
    for j in 0..WINDOW {
        let idx = center - (WINDOW / 2) as isize + j as isize;
        out[j] = Complex32::new(reflect(samples, idx) * w[j], 0.0);
    }
}

/// Magnitude STFT with centered frames and reflection padding.
pub fn stft(samples: &[f32]) -> Result<Spectrogram> {
    if samples.len() < WINDOW {
        return Err(Error::InvalidInput(format!(
            "signal of {} samples is shorter than the {WINDOW}-sample window",
            samples.len()
        )));
    }
    let frames = num_frames(samples.len());
    let fft = fft_forward();
    let mut buf = vec![Complex32::new(0.0, 0.0); WINDOW];
    let mut data = vec![0.0f32; frames * BINS];
    for m in 0..frames {
        frame_complex(samples, m, &mut buf);
        fft.process(&mut buf);
        for k in 0..BINS {
            data[m * BINS + k] = buf[k].norm();
        }
    }
    Ok(Spectrogram { frames, data, sample_rate: SAMPLE_RATE })
}

/// Complex STFT (same framing); used internally by Griffin-Lim.
fn stft_complex(samples: &[f32], frames: usize) -> Vec<Complex32> {
    let fft = fft_forward();
    let mut buf = vec![Complex32::new(0.0, 0.0); WINDOW];
    let mut out = vec![Complex32::new(0.0, 0.0); frames * BINS];
    for m in 0..frames {
        frame_complex(samples, m, &mut buf);
        fft.process(&mut buf);
        out[m * BINS..(m + 1) * BINS].copy_from_slice(&buf[..BINS]);
    }
    out
}

/// Inverse STFT by windowed overlap-add with window-square normalization.
fn istft(spectrum: &[Complex32], frames: usize, target_len: usize) -> Vec<f32> {
    let fft = fft_inverse();
    let w = hann();
    let buf_len = (frames - 1) * HOP + WINDOW;
    let mut acc = vec![0.0f32; buf_len];
    let mut wsum = vec![0.0f32; buf_len];
    let mut time = vec![Complex32::new(0.0, 0.0); WINDOW];
    for m in 0..frames {
        let row = &spectrum[m * BINS..(m + 1) * BINS];
        time[..BINS].copy_from_slice(row);
        for k in BINS..WINDOW {
            time[k] = row[WINDOW - k].conj();
        }
        fft.process(&mut time);
        let base = m * HOP;
        for j in 0..WINDOW {
            let v = time[j].re / WINDOW as f32;
            acc[base + j] += v * w[j];
            wsum[base + j] += w[j] * w[j];
        }
    }
    let mut out = vec![0.0f32; target_len];
    for (i, o) in out.iter_mut().enumerate() {
        let p = i + WINDOW / 2;
        if p < buf_len && wsum[p] > 1e-8 {
            *o = acc[p] / wsum[p];
        }
    }
    out
}

/// Triangular mel filterbank over 0-4000 Hz, plus its right pseudo-inverse.
///
/// Filters are unit-peak triangles on a uniform mel grid, so any two
/// adjacent filters sum to exactly one between their peaks; bins outside the
/// first/last peak sum to less than one.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `[band][bin]`, 32 x 257.
    pub weights: Vec<f32>,
    /// `[bin][band]`, 257 x 32; minimum-norm inverse of `weights`.
    pinv: Vec<f32>,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

impl MelFilterbank {
    pub fn new() -> Self {
        let mel_hi = hz_to_mel(SAMPLE_RATE as f64 / 2.0);
        let edges: Vec<f64> =
            (0..MEL_BANDS + 2).map(|k| mel_hi * k as f64 / (MEL_BANDS + 1) as f64).collect();
        let mut weights = vec![0.0f32; MEL_BANDS * BINS];
        for k in 0..BINS {
            let f = k as f64 * SAMPLE_RATE as f64 / WINDOW as f64;
            let m = hz_to_mel(f);
            for band in 0..MEL_BANDS {
                let (lo, mid, hi) = (edges[band], edges[band + 1], edges[band + 2]);
                let v = if m >= lo && m <= mid {
                    if mid > lo {
                        (m - lo) / (mid - lo)
                    } else {
                        0.0
                    }
                } else if m > mid && m <= hi {
                    (hi - m) / (hi - mid)
                } else {
                    0.0
                };
                weights[band * BINS + k] = v as f32;
            }
        }
        let pinv = right_pseudo_inverse(&weights);
        MelFilterbank { weights, pinv }
    }

    /// Mel energies of one magnitude frame.
    pub fn apply(&self, magnitudes: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0f32; MEL_BANDS];
        for (band, o) in out.iter_mut().enumerate() {
            let row = &self.weights[band * BINS..(band + 1) * BINS];
            let mut acc = 0.0f32;
            for (w, m) in row.iter().zip(magnitudes.iter()) {
                acc += w * m;
            }
            *o = acc;
        }
        out
    }

    /// Approximate magnitudes from mel energies (minimum-norm solution,
    /// clamped at zero).
    pub fn invert(&self, mel: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0f32; BINS];
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.pinv[k * MEL_BANDS..(k + 1) * MEL_BANDS];
            let mut acc = 0.0f32;
            for (p, m) in row.iter().zip(mel.iter()) {
                acc += p * m;
            }
            *o = acc.max(0.0);
        }
        out
    }

    #[cfg(test)]
    fn pinv_entry(&self, bin: usize, band: usize) -> f32 {
        self.pinv[bin * MEL_BANDS + band]
    }
}

impl Default for MelFilterbank {
    fn default() -> Self {
        MelFilterbank::new()
    }
}

/// Fᵀ(FFᵀ)⁻¹ for the 32x257 filterbank, computed in f64.
fn right_pseudo_inverse(weights: &[f32]) -> Vec<f32> {
    let mut gram = vec![0.0f64; MEL_BANDS * MEL_BANDS];
    for a in 0..MEL_BANDS {
        for b in 0..MEL_BANDS {
            let mut acc = 0.0f64;
            for k in 0..BINS {
                acc += weights[a * BINS + k] as f64 * weights[b * BINS + k] as f64;
            }
            gram[a * MEL_BANDS + b] = acc;
        }
    }
    let inv = invert_matrix(&gram, MEL_BANDS);
    let mut pinv = vec![0.0f32; BINS * MEL_BANDS];
    for k in 0..BINS {
        for b in 0..MEL_BANDS {
            let mut acc = 0.0f64;
            for a in 0..MEL_BANDS {
                acc += weights[a * BINS + k] as f64 * inv[a * MEL_BANDS + b];
            }
            pinv[k * MEL_BANDS + b] = acc as f32;
        }
    }
    pinv
}

/// Gauss-Jordan with partial pivoting. The gram matrix of overlapping
/// triangular filters is well conditioned, so this never pivots on zero.
fn invert_matrix(m: &[f64], n: usize) -> Vec<f64> {
    let mut a = m.to_vec();
    let mut inv = vec![0.0f64; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[pivot * n + col].abs() {
                pivot = r;
            }
        }
        if pivot != col {
            for c in 0..n {
                a.swap(col * n + c, pivot * n + c);
                inv.swap(col * n + c, pivot * n + c);
            }
        }
        let d = a[col * n + col];
        assert!(d.abs() > 1e-12, "singular filterbank gram matrix");
        for c in 0..n {
            a[col * n + c] /= d;
            inv[col * n + c] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = a[r * n + col];
                if f != 0.0 {
                    for c in 0..n {
                        a[r * n + c] -= f * a[col * n + c];
                        inv[r * n + c] -= f * inv[col * n + c];
                    }
                }
            }
        }
    }
    inv
}

/// Endpoint-aligned bilinear resampling along the frame axis.
/// `data` is `n_in` rows of `width` values; output has `n_out` rows.
pub fn resample_time(data: &[f32], n_in: usize, width: usize, n_out: usize) -> Vec<f32> {
    assert_eq!(data.len(), n_in * width);
    if n_in == n_out {
        return data.to_vec();
    }
    let mut out = vec![0.0f32; n_out * width];
    for j in 0..n_out {
        let pos = if n_out > 1 { j as f64 * (n_in - 1) as f64 / (n_out - 1) as f64 } else { 0.0 };
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        let frac = (pos - lo as f64) as f32;
        for c in 0..width {
            out[j * width + c] = (1.0 - frac) * data[lo * width + c] + frac * data[hi * width + c];
        }
    }
    out
}

/// Unnormalized 32x32 log-mel image of a spectrogram, `[band][frame]`.
pub fn log_mel_raw(spec: &Spectrogram, fb: &MelFilterbank) -> Vec<f32> {
    // frames x bands, then log, then resample to PATCH_FRAMES, then transpose
    let mut mel = vec![0.0f32; spec.frames * MEL_BANDS];
    for m in 0..spec.frames {
        let e = fb.apply(spec.row(m));
        for (b, v) in e.iter().enumerate() {
            mel[m * MEL_BANDS + b] = (v + LOG_FLOOR).ln();
        }
    }
    let resampled = resample_time(&mel, spec.frames, MEL_BANDS, PATCH_FRAMES);
    let mut out = vec![0.0f32; PATCH_CELLS];
    for f in 0..PATCH_FRAMES {
        for b in 0..MEL_BANDS {
            out[b * PATCH_FRAMES + f] = resampled[f * MEL_BANDS + b];
        }
    }
    out
}

/// Normalized log-mel patch.
pub fn log_mel(spec: &Spectrogram, fb: &MelFilterbank, stats: &MelStats) -> MelPatch {
    let raw = log_mel_raw(spec, fb);
    MelPatch { values: raw.iter().map(|&v| (v - stats.mean) / stats.std).collect() }
}

/// Invert a patch back to a magnitude spectrogram: denormalize, undo the
/// log, upsample the time axis, and apply the filterbank pseudo-inverse.
pub fn patch_to_spectrogram(
    patch: &MelPatch,
    fb: &MelFilterbank,
    stats: &MelStats,
    frames: usize,
) -> Spectrogram {
    // transpose back to frames x bands in raw log-mel units
    let mut mel_log = vec![0.0f32; PATCH_FRAMES * MEL_BANDS];
    for b in 0..MEL_BANDS {
        for f in 0..PATCH_FRAMES {
            mel_log[f * MEL_BANDS + b] = patch.at(b, f) * stats.std + stats.mean;
        }
    }
    let upsampled = resample_time(&mel_log, PATCH_FRAMES, MEL_BANDS, frames);
    let mut data = vec![0.0f32; frames * BINS];
    let mut mel_lin = vec![0.0f32; MEL_BANDS];
    for m in 0..frames {
        for b in 0..MEL_BANDS {
            mel_lin[b] = (upsampled[m * MEL_BANDS + b].exp() - LOG_FLOOR).max(0.0);
        }
        let mags = fb.invert(&mel_lin);
        data[m * BINS..(m + 1) * BINS].copy_from_slice(&mags);
    }
    Spectrogram { frames, data, sample_rate: SAMPLE_RATE }
}

/// Pitch class (0 = C, 9 = A) of a frequency in Hz.
fn pitch_class(f: f64) -> usize {
    let semis = (12.0 * (f / 440.0).log2()).round() as i64;
    ((semis + 9).rem_euclid(12)) as usize
}

/// Chromagram: bin energies folded onto 12 pitch classes, per-frame
/// L2-normalized.
///
/// At this window size a semitone spans only one or two bins, so raw
/// bin-center quantization would scatter window leakage across neighboring
/// pitch classes. Each bin's energy is therefore attributed to the
/// parabolic-refined frequency of the local spectral peak it belongs to.
pub fn chromagram(spec: &Spectrogram) -> Chromagram {
    let bin_hz = SAMPLE_RATE as f64 / WINDOW as f64;
    let mut data = vec![0.0f32; spec.frames * 12];
    for m in 0..spec.frames {
        let row = spec.row(m);
        let out = &mut data[m * 12..(m + 1) * 12];

        let max = row.iter().cloned().fold(0.0f32, f32::max);
        if max == 0.0 {
            continue;
        }
        let floor = max * 1e-4;
        // local maxima with sub-bin frequency refinement
        let mut peak_bins: Vec<usize> = Vec::new();
        let mut peak_hz: Vec<f64> = Vec::new();
        for k in 1..BINS - 1 {
            if row[k] >= floor && row[k] >= row[k - 1] && row[k] > row[k + 1] {
                let (a, b, c) = (row[k - 1] as f64, row[k] as f64, row[k + 1] as f64);
                let denom = a - 2.0 * b + c;
                let delta =
                    if denom.abs() > 1e-12 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
                peak_bins.push(k);
                peak_hz.push((k as f64 + delta) * bin_hz);
            }
        }

        for (k, &mag) in row.iter().enumerate() {
            if mag == 0.0 || (k as f64 * bin_hz) < CHROMA_MIN_HZ as f64 {
                continue;
            }
            let f = if peak_bins.is_empty() {
                k as f64 * bin_hz
            } else {
                // nearest peak by bin index
                let pos = peak_bins.partition_point(|&p| p < k);
                let candidates = [pos.checked_sub(1), Some(pos)];
                let best = candidates
                    .iter()
                    .flatten()
                    .filter(|&&i| i < peak_bins.len())
                    .min_by_key(|&&i| peak_bins[i].abs_diff(k))
                    .copied()
                    .unwrap();
                peak_hz[best]
            };
            if f < CHROMA_MIN_HZ as f64 {
                continue;
            }
            out[pitch_class(f)] += mag * mag;
        }
        let norm = out.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in out.iter_mut() {
                *v = (*v as f64 / norm) as f32;
            }
        }
    }
    Chromagram { frames: spec.frames, data }
}

/// Griffin-Lim phase reconstruction. Deterministic given the seed; returns
/// the signal and the per-iteration spectral-convergence error.
pub fn griffin_lim_with_convergence(
    spec: &Spectrogram,
    target_len: usize,
    iterations: usize,
    seed: u64,
) -> Result<(Vec<f32>, Vec<f32>)> {
    if iterations == 0 {
        return Err(Error::InvalidInput("griffin-lim requires at least one iteration".into()));
    }
    let frames = spec.frames;
    let mut r = rng::stream(seed, "griffin_lim_phase");
    let mut complex: Vec<Complex32> = spec
        .data
        .iter()
        .map(|&m| {
            let phase: f32 = r.gen_range(0.0..std::f32::consts::TAU);
            Complex32::from_polar(m, phase)
        })
        .collect();

    let mag_norm: f64 = spec.data.iter().map(|&m| (m as f64) * (m as f64)).sum::<f64>().sqrt();
    let mut signal = istft(&complex, frames, target_len);
    let mut errors = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let rebuilt = stft_complex(&signal, frames);
        let mut err = 0.0f64;
        for (c, &m) in rebuilt.iter().zip(spec.data.iter()) {
            let d = c.norm() as f64 - m as f64;
            err += d * d;
        }
        errors.push(if mag_norm > 0.0 { (err.sqrt() / mag_norm) as f32 } else { 0.0 });
        for (dst, (c, &m)) in complex.iter_mut().zip(rebuilt.iter().zip(spec.data.iter())) {
            let phase = if c.norm() > 0.0 { c.arg() } else { 0.0 };
            *dst = Complex32::from_polar(m, phase);
        }
        signal = istft(&complex, frames, target_len);
    }
    let peak = signal.iter().fold(0.0f32, |a, &v| a.max(v.abs()));
    if peak > 1.0 {
        for v in signal.iter_mut() {
            *v /= peak;
        }
    }
    Ok((signal, errors))
}

/// Griffin-Lim without the convergence trace.
pub fn griffin_lim(spec: &Spectrogram, target_len: usize, iterations: usize, seed: u64) -> Result<Vec<f32>> {
    griffin_lim_with_convergence(spec, target_len, iterations, seed).map(|(s, _)| s)
}

/// Write an 8-bit grayscale PNG (row-major) plus a JSON sidecar annotating
/// the value range and any extra metadata.
pub fn export_png(
    path: &Path,
    rows: usize,
    cols: usize,
    data: &[f32],
    extra_meta: &serde_json::Map<String, serde_json::Value>,
) -> Result<()> {
    assert_eq!(data.len(), rows * cols);
    let min = data.iter().cloned().fold(f32::INFINITY, f32::min);
    let max = data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let span = if max > min { max - min } else { 1.0 };
    let pixels: Vec<u8> = data.iter().map(|&v| (((v - min) / span) * 255.0).round() as u8).collect();

    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::fs::File::create(path)?;
    let mut encoder = png::Encoder::new(std::io::BufWriter::new(file), cols as u32, rows as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer =
        encoder.write_header().map_err(|e| Error::InvalidInput(format!("png encode: {e}")))?;
    writer
        .write_image_data(&pixels)
        .map_err(|e| Error::InvalidInput(format!("png encode: {e}")))?;
    writer.finish().map_err(|e| Error::InvalidInput(format!("png encode: {e}")))?;

    let mut meta = extra_meta.clone();
    meta.insert("rows".into(), rows.into());
    meta.insert("cols".into(), cols.into());
    meta.insert("min".into(), (min as f64).into());
    meta.insert("max".into(), (max as f64).into());
    let sidecar = path.with_extension("json");
    std::fs::write(sidecar, serde_json::to_vec_pretty(&serde_json::Value::Object(meta))?)?;
    Ok(())
}

/// dB-scale a magnitude image for export.
pub fn to_db(data: &[f32]) -> Vec<f32> {
    data.iter().map(|&m| 20.0 * (m + 1e-6).log10()).collect()
}
