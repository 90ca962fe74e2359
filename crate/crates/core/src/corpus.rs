//! Procedural corpus of short instrumental clips.
//!
//! Six synthetic instrument families, each defined by a harmonic recipe, an
//! amplitude envelope, and optional vibrato, so timbre is the controlled
//! variable while melody content is seed-controlled. Clips are 2.0 s of
//! mono 8 kHz audio; rendering is additive synthesis with a hard Nyquist
//! cutoff per partial.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::SAMPLE_RATE;
use crate::error::Error;
use crate::rng;
use crate::Result;

pub const NUM_CLASSES: usize = 6;
pub const CLIP_SECONDS: f32 = 2.0;
pub const CLIP_SAMPLES: usize = 16000;
/// Corpus melodies are 4 notes of this duration.
pub const NOTE_SECONDS: f32 = 0.5;
/// C-major pentatonic over two octaves, the melody pitch pool.
pub const PENTATONIC_POOL: [u8; 10] = [60, 62, 64, 67, 69, 72, 74, 76, 79, 81];

pub const GENERATOR_VERSION: &str = "1";

/// Amplitude envelope segments, all in seconds. The decay segment falls
/// from 1.0 to `sustain_level`, which is then held for `sustain_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub attack_s: f32,
    pub decay_s: f32,
    pub sustain_s: f32,
    pub release_s: f32,
    pub sustain_level: f32,
}

impl Envelope {
    pub fn total(&self) -> f32 {
        self.attack_s + self.decay_s + self.sustain_s + self.release_s
    }

    /// Envelope value at `t` seconds after note onset.
    pub fn value(&self, t: f32) -> f32 {
        if t < 0.0 {
            return 0.0;
        }
        let mut u = t;
        if u < self.attack_s {
            return u / self.attack_s;
        }
        u -= self.attack_s;
        if u < self.decay_s {
            let frac = u / self.decay_s;
            return 1.0 + frac * (self.sustain_level - 1.0);
        }
        u -= self.decay_s;
        if u < self.sustain_s {
            return self.sustain_level;
        }
        u -= self.sustain_s;
        if u < self.release_s {
            return self.sustain_level * (1.0 - u / self.release_s);
        }
        0.0
    }
}

/// One synthetic instrument family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstrumentSpec {
    /// Class index, 0..NUM_CLASSES.
    pub id: usize,
    pub name: String,
    /// Relative partial amplitudes in [0, 1], at most 12.
    pub harmonic_amps: Vec<f32>,
    /// Frequency multiples of the fundamental; inharmonic allowed.
    pub partial_ratios: Vec<f32>,
    pub envelope: Envelope,
    pub vibrato_rate_hz: f32,
    pub vibrato_depth_cents: f32,
}

impl InstrumentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.harmonic_amps.is_empty() || self.harmonic_amps.len() > 12 {
            return Err(Error::InvalidInput(format!(
                "instrument '{}': need 1..=12 partials",
                self.name
            )));
        }
        if self.harmonic_amps.len() != self.partial_ratios.len() {
            return Err(Error::InvalidInput(format!(
                "instrument '{}': amps/ratios length mismatch",
                self.name
            )));
        }
        if !self.harmonic_amps.iter().all(|&a| (0.0..=1.0).contains(&a)) {
            return Err(Error::InvalidInput(format!(
                "instrument '{}': partial amplitudes must lie in [0,1]",
                self.name
            )));
        }
        if !self.harmonic_amps.iter().any(|&a| a > 0.0) {
            return Err(Error::InvalidInput(format!(
                "instrument '{}': all partials are silent",
                self.name
            )));
        }
        let e = &self.envelope;
        if e.attack_s < 0.0 || e.decay_s < 0.0 || e.sustain_s < 0.0 || e.release_s < 0.0 {
            return Err(Error::InvalidInput(format!(
                "instrument '{}': negative envelope segment",
                self.name
            )));
        }
        if e.total() > NOTE_SECONDS + 1e-6 {
            return Err(Error::InvalidInput(format!(
                "instrument '{}': envelope longer than the note",
                self.name
            )));
        }
        if !(0.0..=1.0).contains(&e.sustain_level) {
            return Err(Error::InvalidInput(format!(
                "instrument '{}': sustain level out of [0,1]",
                self.name
            )));
        }
        Ok(())
    }
}

/// The six built-in instrument families.
pub fn builtin_instruments() -> Vec<InstrumentSpec> {
    vec![
        InstrumentSpec {
            id: 0,
            name: "pluck".into(),
            harmonic_amps: vec![0.6, 1.0, 0.5, 0.28, 0.15, 0.08],
            partial_ratios: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            envelope: Envelope {
                attack_s: 0.004,
                decay_s: 0.42,
                sustain_s: 0.0,
                release_s: 0.05,
                sustain_level: 0.0,
            },
            vibrato_rate_hz: 0.0,
            vibrato_depth_cents: 0.0,
        },
        InstrumentSpec {
            id: 1,
            name: "organ".into(),
            harmonic_amps: vec![1.0, 0.75, 0.6, 0.55, 0.4],
            partial_ratios: vec![1.0, 2.0, 3.0, 4.0, 8.0],
            envelope: Envelope {
                attack_s: 0.02,
                decay_s: 0.02,
                sustain_s: 0.38,
                release_s: 0.07,
                sustain_level: 1.0,
            },
            vibrato_rate_hz: 0.0,
            vibrato_depth_cents: 0.0,
        },
        InstrumentSpec {
            id: 2,
            name: "flute".into(),
            harmonic_amps: vec![1.0, 0.22, 0.05],
            partial_ratios: vec![1.0, 2.0, 3.0],
            envelope: Envelope {
                attack_s: 0.07,
                decay_s: 0.04,
                sustain_s: 0.30,
                release_s: 0.08,
                sustain_level: 0.85,
            },
            vibrato_rate_hz: 0.0,
            vibrato_depth_cents: 0.0,
        },
        InstrumentSpec {
            id: 3,
            name: "brass".into(),
            harmonic_amps: vec![1.0, 0.75, 0.6, 0.55, 0.4],
            partial_ratios: vec![1.0, 2.0, 3.0, 4.35, 8.7],
            envelope: Envelope {
                attack_s: 0.03,
                decay_s: 0.06,
                sustain_s: 0.33,
                release_s: 0.07,
                sustain_level: 0.8,
            },
            vibrato_rate_hz: 0.0,
            vibrato_depth_cents: 0.0,
        },
        InstrumentSpec {
            id: 4,
            name: "strings".into(),
            harmonic_amps: vec![1.0, 0.75, 0.6, 0.45, 0.4, 0.36, 0.32, 0.28],
            partial_ratios: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            envelope: Envelope {
                attack_s: 0.10,
                decay_s: 0.04,
                sustain_s: 0.26,
                release_s: 0.09,
                sustain_level: 0.9,
            },
            vibrato_rate_hz: 5.5,
            vibrato_depth_cents: 25.0,
        },
        InstrumentSpec {
            id: 5,
            name: "bell".into(),
            harmonic_amps: vec![1.0, 0.6, 0.4, 0.25],
            partial_ratios: vec![1.0, 2.72, 3.76, 5.6],
            envelope: Envelope {
                attack_s: 0.002,
                decay_s: 0.44,
                sustain_s: 0.0,
                release_s: 0.04,
                sustain_level: 0.0,
            },
            vibrato_rate_hz: 0.0,
            vibrato_depth_cents: 0.0,
        },
    ]
}

pub fn instrument_name(id: usize) -> &'static str {
    ["pluck", "organ", "flute", "brass", "strings", "bell"][id]
}

pub fn instrument_id(name: &str) -> Option<usize> {
    ["pluck", "organ", "flute", "brass", "strings", "bell"].iter().position(|&n| n == name)
}

/// A single note in a clip melody.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    /// 48..=84.
    pub midi_pitch: u8,
    pub onset_s: f32,
    pub duration_s: f32,
    /// [0, 1].
    pub velocity: f32,
}

pub fn midi_to_hz(midi: u8) -> f32 {
    440.0 * ((midi as f32 - 69.0) / 12.0).exp2()
}

/// A rendered corpus clip.
#[derive(Debug, Clone)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub label: usize,
    pub melody: Vec<NoteEvent>,
    pub clip_id: String,
    pub seed: u64,
}

/// Additively synthesize one note. Partials at or above Nyquist are
/// silently dropped. Output is peak-normalized to the note velocity.
pub fn render_tone(spec: &InstrumentSpec, note: &NoteEvent, sample_rate: u32) -> Result<Vec<f32>> {
    spec.validate()?;
    if sample_rate != SAMPLE_RATE {
        return Err(Error::InvalidInput(format!("unsupported sample rate {sample_rate}")));
    }
    if !(48..=84).contains(&note.midi_pitch) {
        return Err(Error::InvalidInput(format!("midi pitch {} out of 48..=84", note.midi_pitch)));
    }
    let n = (note.duration_s * sample_rate as f32).round() as usize;
    let mut out = vec![0.0f32; n];
    if note.velocity == 0.0 {
        return Ok(out);
    }
    let f0 = midi_to_hz(note.midi_pitch);
    let nyquist = sample_rate as f32 / 2.0;
    let dt = 1.0 / sample_rate as f32;
    for (amp, ratio) in spec.harmonic_amps.iter().zip(spec.partial_ratios.iter()) {
        let fk = f0 * ratio;
        if fk >= nyquist || *amp == 0.0 {
            continue;
        }
        // phase integration so vibrato modulates instantaneous frequency
        let mut phase = 0.0f32;
        for (i, o) in out.iter_mut().enumerate() {
            let t = i as f32 * dt;
            let f_inst = if spec.vibrato_depth_cents > 0.0 {
                let cents = spec.vibrato_depth_cents
                    * (std::f32::consts::TAU * spec.vibrato_rate_hz * t).sin();
                fk * (cents / 1200.0).exp2()
            } else {
                fk
            };
            *o += amp * phase.sin();
            phase += std::f32::consts::TAU * f_inst * dt;
            if phase > std::f32::consts::TAU {
                phase -= std::f32::consts::TAU;
            }
        }
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o *= spec.envelope.value(i as f32 * dt);
    }
    let peak = out.iter().fold(0.0f32, |a, &v| a.max(v.abs()));
    if peak > 0.0 {
        let scale = note.velocity / peak;
        for o in out.iter_mut() {
            *o *= scale;
        }
    }
    Ok(out)
}

/// Render a full clip: notes summed at their onsets, then globally
/// peak-normalized to 0.9. Deterministic given (spec, melody, seed).
pub fn render_clip(
    spec: &InstrumentSpec,
    melody: &[NoteEvent],
    clip_id: &str,
    seed: u64,
) -> Result<AudioClip> {
    if melody.is_empty() {
        return Err(Error::InvalidInput("degenerate clip: empty melody".into()));
    }
    let mut samples = vec![0.0f32; CLIP_SAMPLES];
    for note in melody {
        if note.onset_s < 0.0 || note.onset_s + note.duration_s > CLIP_SECONDS + 1e-6 {
            return Err(Error::InvalidInput(format!(
                "note at {}s for {}s does not fit the clip",
                note.onset_s, note.duration_s
            )));
        }
        let tone = render_tone(spec, note, SAMPLE_RATE)?;
        let offset = (note.onset_s * SAMPLE_RATE as f32).round() as usize;
        for (i, v) in tone.iter().enumerate() {
            if offset + i < CLIP_SAMPLES {
                samples[offset + i] += v;
            }
        }
    }
    let peak = samples.iter().fold(0.0f32, |a, &v| a.max(v.abs()));
    if peak > 0.0 {
        let scale = 0.9 / peak;
        for s in samples.iter_mut() {
            *s *= scale;
        }
    }
    Ok(AudioClip {
        samples,
        sample_rate: SAMPLE_RATE,
        label: spec.id,
        melody: melody.to_vec(),
        clip_id: clip_id.to_string(),
        seed,
    })
}

/// Draw the standard corpus melody: 4 pentatonic notes on a 0.5 s grid.
pub fn random_melody<R: Rng>(rng: &mut R) -> Vec<NoteEvent> {
    (0..4)
        .map(|i| NoteEvent {
            midi_pitch: PENTATONIC_POOL[rng.gen_range(0..PENTATONIC_POOL.len())],
            onset_s: i as f32 * NOTE_SECONDS,
            duration_s: NOTE_SECONDS,
            velocity: rng.gen_range(0.7..1.0),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Eval,
}

#[derive(Debug, Clone, Copy)]
pub struct CorpusConfig {
    pub clips_per_instrument: usize,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { clips_per_instrument: 300, train_frac: 0.9, val_frac: 0.1 }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clips_per_instrument == 0 {
            return Err(Error::Config("clips_per_instrument must be positive".into()));
        }
        if self.train_frac < 0.0 || self.val_frac < 0.0 || self.train_frac + self.val_frac > 1.0 + 1e-9 {
            return Err(Error::Config("split fractions must be nonnegative and sum to at most 1".into()));
        }
        Ok(())
    }

    /// Per-class (train, val, eval) counts.
    pub fn split_counts(&self) -> (usize, usize, usize) {
        let n = self.clips_per_instrument;
        let train = (n as f64 * self.train_frac).round() as usize;
        let val = ((n as f64 * self.val_frac).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

/// One manifest line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub path: String,
    pub label: usize,
    pub label_name: String,
    pub split: Split,
    pub seed: u64,
}

/// The corpus on disk: entries plus generation provenance.
#[derive(Debug, Clone)]
pub struct CorpusManifest {
    pub dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub global_seed: u64,
    pub generator_version: String,
}

impl CorpusManifest {
    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn wav_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.dir.join(&entry.path)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusMeta {
    global_seed: u64,
    generator_version: String,
    config_hash: String,
    clips_per_instrument: usize,
    train_frac: f64,
    val_frac: f64,
    num_classes: usize,
}

/// Generate the full corpus under `dir`: WAV files, `manifest.jsonl`, and
/// `corpus_meta.json`. Pure function of (config, global_seed).
pub fn generate_corpus(
    dir: &Path,
    config: &CorpusConfig,
    global_seed: u64,
    config_hash: &str,
) -> Result<CorpusManifest> {
    config.validate()?;
    let instruments = builtin_instruments();
    let wav_dir = dir.join("wav");
    fs::create_dir_all(&wav_dir)?;
    let (train_n, val_n, _) = config.split_counts();

    let mut entries = Vec::with_capacity(instruments.len() * config.clips_per_instrument);
    for spec in &instruments {
        for i in 0..config.clips_per_instrument {
            let clip_id = format!("{}_{:04}", spec.name, i);
            let mut rng = rng::stream(global_seed, &clip_id);
            let seed: u64 = rng.gen();
            let melody = random_melody(&mut rng);
            let clip = render_clip(spec, &melody, &clip_id, seed)?;
            let rel_path = format!("wav/{clip_id}.wav");
            write_wav(&dir.join(&rel_path), &clip.samples)?;
            let split = if i < train_n {
                Split::Train
            } else if i < train_n + val_n {
                Split::Val
            } else {
                Split::Eval
            };
            entries.push(ManifestEntry {
                clip_id,
                path: rel_path,
                label: spec.id,
                label_name: spec.name.clone(),
                split,
                seed,
            });
        }
    }

    let manifest_path = dir.join("manifest.jsonl");
    let mut out = BufWriter::new(fs::File::create(&manifest_path)?);
    for e in &entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;

    let meta = CorpusMeta {
        global_seed,
        generator_version: GENERATOR_VERSION.to_string(),
        config_hash: config_hash.to_string(),
        clips_per_instrument: config.clips_per_instrument,
        train_frac: config.train_frac,
        val_frac: config.val_frac,
        num_classes: NUM_CLASSES,
    };
    fs::write(dir.join("corpus_meta.json"), serde_json::to_vec_pretty(&meta)?)?;

    Ok(CorpusManifest {
        dir: dir.to_path_buf(),
        entries,
        global_seed,
        generator_version: GENERATOR_VERSION.to_string(),
    })
}

/// Load and validate a corpus directory written by `generate_corpus`.
pub fn load_manifest(dir: &Path) -> Result<CorpusManifest> {
    let manifest_path = dir.join("manifest.jsonl");
    if !manifest_path.exists() {
        return Err(Error::MissingArtifact(format!("{}", manifest_path.display())));
    }
    let meta: CorpusMeta = serde_json::from_slice(&fs::read(dir.join("corpus_meta.json"))?)?;
    let text = fs::read_to_string(&manifest_path)?;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line)?;
        if !seen.insert(entry.clip_id.clone()) {
            return Err(Error::InvalidInput(format!("duplicate clip id '{}'", entry.clip_id)));
        }
        let wav = dir.join(&entry.path);
        if !wav.exists() {
            return Err(Error::MissingArtifact(format!("{}", wav.display())));
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::InvalidInput("manifest has no entries".into()));
    }
    Ok(CorpusManifest {
        dir: dir.to_path_buf(),
        entries,
        global_seed: meta.global_seed,
        generator_version: meta.generator_version,
    })
}

/// PCM16 mono RIFF/WAVE at 8 kHz.
pub fn write_wav(path: &Path, samples: &[f32]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<Vec<f32>> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.sample_rate != SAMPLE_RATE || spec.bits_per_sample != 16 {
        return Err(Error::Wav(format!(
            "expected mono pcm16 at {SAMPLE_RATE} Hz, got {} ch {} Hz {} bits",
            spec.channels, spec.sample_rate, spec.bits_per_sample
        )));
    }
    reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32767.0).map_err(|e| Error::Wav(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp;

    fn flat_single_partial() -> InstrumentSpec {
        InstrumentSpec {
            id: 0,
            name: "test_sine".into(),
            harmonic_amps: vec![1.0],
            partial_ratios: vec![1.0],
            envelope: Envelope {
                attack_s: 0.0,
                decay_s: 0.0,
                sustain_s: 0.5,
                release_s: 0.0,
                sustain_level: 1.0,
            },
            vibrato_rate_hz: 0.0,
            vibrato_depth_cents: 0.0,
        }
    }

    #[test]
    fn builtin_specs_are_valid_and_pairwise_distinguishable() {
        let specs = builtin_instruments();
        assert_eq!(specs.len(), NUM_CLASSES);
        for s in &specs {
            s.validate().unwrap();
        }
        // normalized harmonic-amplitude vectors on the integer harmonic
        // grid (each partial's amplitude lands at its nearest harmonic slot)
        let vecs: Vec<Vec<f64>> = specs
            .iter()
            .map(|s| {
                let mut v = vec![0.0f64; 12];
                for (&a, &r) in s.harmonic_amps.iter().zip(s.partial_ratios.iter()) {
                    let slot = (r.round() as usize).clamp(1, 12) - 1;
                    v[slot] += a as f64;
                }
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| x / n).collect()
            })
            .collect();
        for a in 0..vecs.len() {
            for b in a + 1..vecs.len() {
                let cos: f64 = vecs[a].iter().zip(&vecs[b]).map(|(x, y)| x * y).sum();
                assert!(
                    cos < 0.95,
                    "{} and {} too similar: cos = {cos:.4}",
                    specs[a].name,
                    specs[b].name
                );
            }
        }
    }

    #[test]
    fn a440_tone_peaks_at_the_right_dft_bin() {
        let spec = flat_single_partial();
        let note = NoteEvent { midi_pitch: 69, onset_s: 0.0, duration_s: 0.5, velocity: 1.0 };
        let tone = render_tone(&spec, &note, SAMPLE_RATE).unwrap();
        assert_eq!(tone.len(), 4000);
        // naive DFT peak-pick oracle over the rendered array
        let n = tone.len();
        let mut best = (0usize, 0.0f64);
        for k in 1..n / 2 {
            let mut re = 0.0f64;
            let mut im = 0.0f64;
            for (i, &x) in tone.iter().enumerate() {
                let ang = -std::f64::consts::TAU * k as f64 * i as f64 / n as f64;
                re += x as f64 * ang.cos();
                im += x as f64 * ang.sin();
            }
            let mag = re * re + im * im;
            if mag > best.1 {
                best = (k, mag);
            }
        }
        let expected_bin = (440.0 * n as f64 / SAMPLE_RATE as f64).round() as usize;
        assert!(
            (best.0 as i64 - expected_bin as i64).abs() <= 1,
            "peak at bin {} expected {expected_bin}",
            best.0
        );
    }

    #[test]
    fn zero_velocity_renders_silence() {
        let spec = flat_single_partial();
        let note = NoteEvent { midi_pitch: 60, onset_s: 0.0, duration_s: 0.5, velocity: 0.0 };
        let tone = render_tone(&spec, &note, SAMPLE_RATE).unwrap();
        assert!(tone.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn partials_at_or_above_nyquist_are_dropped() {
        let specs = builtin_instruments();
        let bell = specs.iter().find(|s| s.name == "bell").unwrap();
        // at midi 84 the 5.6x partial exceeds the 4 kHz Nyquist
        assert!(midi_to_hz(84) * 5.6 > 4000.0);
        let note = NoteEvent { midi_pitch: 84, onset_s: 0.0, duration_s: 0.5, velocity: 0.9 };
        let full = render_tone(bell, &note, SAMPLE_RATE).unwrap();
        let mut trimmed = bell.clone();
        trimmed.harmonic_amps.pop();
        trimmed.partial_ratios.pop();
        let without = render_tone(&trimmed, &note, SAMPLE_RATE).unwrap();
        assert_eq!(full.len(), without.len());
        for (a, b) in full.iter().zip(without.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn single_note_clip_is_the_tone_renormalized() {
        let specs = builtin_instruments();
        let organ = &specs[1];
        let note = NoteEvent { midi_pitch: 64, onset_s: 0.0, duration_s: 0.5, velocity: 0.8 };
        let clip = render_clip(organ, &[note], "c0", 7).unwrap();
        let tone = render_tone(organ, &note, SAMPLE_RATE).unwrap();
        let peak = tone.iter().fold(0.0f32, |a, &v| a.max(v.abs()));
        let scale = 0.9 / peak;
        for (i, &t) in tone.iter().enumerate() {
            assert_eq!(clip.samples[i], t * scale, "sample {i}");
        }
        assert!(clip.samples[tone.len()..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clip_rendering_is_deterministic_and_bounded() {
        let specs = builtin_instruments();
        let mut rng = rng::stream(11, "melody_test");
        let melody = random_melody(&mut rng);
        let a = render_clip(&specs[4], &melody, "x", 1).unwrap();
        let b = render_clip(&specs[4], &melody, "x", 1).unwrap();
        assert!(a.samples.iter().zip(b.samples.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.samples.len(), CLIP_SAMPLES);
        let peak = a.samples.iter().fold(0.0f32, |acc, &v| acc.max(v.abs()));
        assert!(peak <= 0.9 + 1e-6 && a.samples.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn empty_melody_is_rejected() {
        let specs = builtin_instruments();
        assert!(render_clip(&specs[0], &[], "x", 0).is_err());
    }

    #[test]
    fn pentatonic_melody_concentrates_chroma_on_used_classes() {
        let specs = builtin_instruments();
        let melody = vec![
            NoteEvent { midi_pitch: 60, onset_s: 0.0, duration_s: 0.5, velocity: 0.9 },
            NoteEvent { midi_pitch: 64, onset_s: 0.5, duration_s: 0.5, velocity: 0.9 },
            NoteEvent { midi_pitch: 67, onset_s: 1.0, duration_s: 0.5, velocity: 0.9 },
            NoteEvent { midi_pitch: 72, onset_s: 1.5, duration_s: 0.5, velocity: 0.9 },
        ];
        let clip = render_clip(&specs[1], &melody, "pent", 0).unwrap();
        let ch = dsp::chromagram(&dsp::stft(&clip.samples).unwrap());
        let used: HashSet<usize> = melody.iter().map(|n| (n.midi_pitch as usize) % 12).collect();
        let mut on = 0.0f64;
        let mut total = 0.0f64;
        for m in 0..ch.frames {
            for (pc, &v) in ch.row(m).iter().enumerate() {
                let e = (v as f64) * (v as f64);
                total += e;
                if used.contains(&pc) {
                    on += e;
                }
            }
        }
        assert!(on / total >= 0.8, "only {:.3} of chroma mass on used classes", on / total);
    }

    #[test]
    fn tiny_corpus_is_balanced_split_and_byte_deterministic() {
        let dir1 = std::env::temp_dir().join("tl_corpus_det_a");
        let dir2 = std::env::temp_dir().join("tl_corpus_det_b");
        for d in [&dir1, &dir2] {
            if d.exists() {
                fs::remove_dir_all(d).unwrap();
            }
        }
        let config =
            CorpusConfig { clips_per_instrument: 4, train_frac: 0.75, val_frac: 0.25 };
        assert_eq!(config.split_counts(), (3, 1, 0));
        let m1 = generate_corpus(&dir1, &config, 123, "h").unwrap();
        let m2 = generate_corpus(&dir2, &config, 123, "h").unwrap();
        assert_eq!(m1.entries.len(), 24);
        for id in 0..NUM_CLASSES {
            assert_eq!(m1.entries.iter().filter(|e| e.label == id).count(), 4);
        }
        assert_eq!(
            fs::read(dir1.join("manifest.jsonl")).unwrap(),
            fs::read(dir2.join("manifest.jsonl")).unwrap()
        );
        for e in &m1.entries {
            assert_eq!(fs::read(m1.wav_path(e)).unwrap(), fs::read(m2.dir.join(&e.path)).unwrap());
        }
        // loading validates and round-trips
        let loaded = load_manifest(&dir1).unwrap();
        assert_eq!(loaded.entries.len(), 24);
        assert_eq!(loaded.global_seed, 123);
    }

    #[test]
    fn default_split_is_270_30() {
        let config = CorpusConfig::default();
        assert_eq!(config.split_counts(), (270, 30, 0));
    }

    #[test]
    fn unwritable_directory_is_an_io_error() {
        let config = CorpusConfig { clips_per_instrument: 1, train_frac: 1.0, val_frac: 0.0 };
        let err = generate_corpus(Path::new("/proc/definitely/not/writable"), &config, 0, "h");
        assert!(matches!(err, Err(Error::Io(_))));
    }

    #[test]
    fn wav_roundtrip_within_quantization() {
        let dir = std::env::temp_dir().join("tl_wav_rt");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.wav");
        let samples: Vec<f32> = (0..64).map(|i| ((i as f32) / 10.0).sin() * 0.9).collect();
        write_wav(&path, &samples).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 1.0 / 32767.0 + 1e-7);
        }
    }
}
