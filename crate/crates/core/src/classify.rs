//! Instrument classifiers.
//!
//! Three-stage pipeline: a teacher trained with cross entropy on log-mel
//! patches; a student encoder distilled onto the teacher's penultimate
//! features with a cosine loss; and a classification head trained on top of
//! the frozen student. A non-distilled baseline trains the same
//! student+head architecture end-to-end on latents directly.

use rand::seq::SliceRandom;

use crate::corpus::NUM_CLASSES;
use crate::dsp::{self, MelFilterbank, MelPatch, MelStats, PATCH_CELLS};
use crate::error::Error;
use crate::latent::{Latent, LATENT_DIM};
use crate::nn::{adam_step, cosine_loss, cross_entropy, softmax, AdamConfig, AdamState};
use crate::nn::{Activation, Gradients, NetSpec, ParamStore};
use crate::rng;
use crate::Result;

/// Dimension of the teacher feature layer the student is distilled onto.
pub const FEATURE_DIM: usize = 128;

/// One classification outcome: argmax class, its softmax confidence, and
/// the full probability vector. Ties break to the lowest class id.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_id: usize,
    pub confidence: f32,
    pub probs: Vec<f32>,
}

pub(crate) fn prediction_from_logits(logits: &[f32]) -> Prediction {
    let probs = softmax(logits);
    let mut best = 0usize;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Prediction { class_id: best, confidence: probs[best], probs }
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { epochs: 20, batch: 64, lr: 1e-3 }
    }
}

fn teacher_spec() -> NetSpec {
    NetSpec::dense(
        "teacher",
        &[PATCH_CELLS, 256, FEATURE_DIM, NUM_CLASSES],
        &[Activation::Rectified, Activation::Rectified, Activation::Linear],
    )
}

fn student_spec() -> NetSpec {
    NetSpec::dense(
        "student",
        &[LATENT_DIM, 128, FEATURE_DIM],
        &[Activation::Rectified, Activation::Linear],
    )
}

fn head_spec() -> NetSpec {
    NetSpec::dense("head", &[FEATURE_DIM, NUM_CLASSES], &[Activation::Linear])
}

/// Stage-one classifier over flattened 32x32 patches.
#[derive(Debug, Clone)]
pub struct TeacherClassifier {
    pub spec: NetSpec,
    pub params: ParamStore,
}

impl TeacherClassifier {
    pub fn new(seed: u64) -> Self {
        let spec = teacher_spec();
        let mut params = ParamStore::new();
        spec.init_params(&mut params, seed);
        TeacherClassifier { spec, params }
    }

    pub fn from_params(params: ParamStore) -> Self {
        TeacherClassifier { spec: teacher_spec(), params }
    }

    pub fn logits(&self, patch_values: &[f32]) -> Result<Vec<f32>> {
        Ok(self.spec.forward(&self.params, patch_values)?.output().to_vec())
    }

    /// Penultimate-layer activations: the distillation target.
    pub fn features(&self, patch_values: &[f32]) -> Result<Vec<f32>> {
        let trace = self.spec.forward(&self.params, patch_values)?;
        Ok(trace.layer_output(1).to_vec())
    }

    pub fn predict_patch(&self, patch: &MelPatch) -> Result<Prediction> {
        Ok(prediction_from_logits(&self.logits(&patch.values)?))
    }
}

/// Latent-space encoder matched to the teacher feature dimension.
#[derive(Debug, Clone)]
pub struct StudentEncoder {
    pub spec: NetSpec,
    pub params: ParamStore,
}

impl StudentEncoder {
    pub fn new(seed: u64) -> Self {
        let spec = student_spec();
        let mut params = ParamStore::new();
        spec.init_params(&mut params, seed);
        StudentEncoder { spec, params }
    }

    pub fn from_params(params: ParamStore) -> Self {
        StudentEncoder { spec: student_spec(), params }
    }

    pub fn features(&self, latent: &Latent) -> Result<Vec<f32>> {
        Ok(self.spec.forward(&self.params, &latent.values)?.output().to_vec())
    }
}

/// Student encoder plus classification head; `distilled` records which
/// training route produced it.
#[derive(Debug, Clone)]
pub struct LatentClassifier {
    pub student: StudentEncoder,
    pub head_params: ParamStore,
    pub distilled: bool,
}

impl LatentClassifier {
    pub fn predict(&self, latent: &Latent) -> Result<Prediction> {
        let feats = self.student.features(latent)?;
        let logits = head_spec().forward(&self.head_params, &feats)?.output().to_vec();
        Ok(prediction_from_logits(&logits))
    }
}

/// Classify raw audio through the mel front end with the teacher.
pub fn classify_audio(
    teacher: &TeacherClassifier,
    samples: &[f32],
    fb: &MelFilterbank,
    stats: &MelStats,
) -> Result<Prediction> {
    let spec = dsp::stft(samples)?;
    let patch = dsp::log_mel(&spec, fb, stats);
    teacher.predict_patch(&patch)
}

fn check_dataset(n_x: usize, n_y: usize, what: &str) -> Result<()> {
    if n_x == 0 || n_x != n_y {
        return Err(Error::InvalidInput(format!("{what}: {n_x} inputs vs {n_y} labels")));
    }
    Ok(())
}

/// Cross-entropy training of the teacher. Fails if validation accuracy ends
/// below 90%: the synthetic corpus is separable, and a teacher below that
/// bar makes every downstream stage meaningless.
pub fn train_teacher(
    train_x: &[Vec<f32>],
    train_y: &[usize],
    val_x: &[Vec<f32>],
    val_y: &[usize],
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<(TeacherClassifier, f32)> {
    check_dataset(train_x.len(), train_y.len(), "teacher train set")?;
    check_dataset(val_x.len(), val_y.len(), "teacher val set")?;
    let teacher_init = TeacherClassifier::new(seed);
    let spec = teacher_init.spec.clone();
    let mut params = teacher_init.params;
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..train_x.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = rng::stream_indexed(seed, "teacher_epoch", epoch as u64);
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch) {
            let mut grads = Gradients::new();
            for &idx in batch {
                let trace = spec.forward(&params, &train_x[idx])?;
                let (_, dlogits) = cross_entropy(trace.output(), train_y[idx])?;
                spec.backward(&params, &trace, &dlogits, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f32);
            adam_step(&mut params, &grads, &mut adam)?;
        }
    }

    let teacher = TeacherClassifier { spec, params };
    let mut correct = 0usize;
    for (x, &y) in val_x.iter().zip(val_y.iter()) {
        if prediction_from_logits(&teacher.logits(x)?).class_id == y {
            correct += 1;
        }
    }
    let acc = correct as f32 / val_x.len() as f32;
    if acc < 0.9 {
        return Err(Error::TrainingFailure(format!(
            "teacher validation accuracy {acc:.3} below the 0.90 bar"
        )));
    }
    Ok((teacher, acc))
}

/// Distill the student onto precomputed teacher features with a cosine
/// loss. Fails if the mean validation cosine similarity ends below 0.5.
pub fn distill_student(
    train_z: &[Latent],
    train_feats: &[Vec<f32>],
    val_z: &[Latent],
    val_feats: &[Vec<f32>],
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<(StudentEncoder, f32)> {
    check_dataset(train_z.len(), train_feats.len(), "distill train set")?;
    check_dataset(val_z.len(), val_feats.len(), "distill val set")?;
    let init = StudentEncoder::new(seed);
    let spec = init.spec.clone();
    let mut params = init.params;
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..train_z.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = rng::stream_indexed(seed, "distill_epoch", epoch as u64);
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch) {
            let mut grads = Gradients::new();
            for &idx in batch {
                let trace = spec.forward(&params, &train_z[idx].values)?;
                let (_, dfeat) = cosine_loss(trace.output(), &train_feats[idx])?;
                spec.backward(&params, &trace, &dfeat, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f32);
            adam_step(&mut params, &grads, &mut adam)?;
        }
    }

    let student = StudentEncoder { spec, params };
    let mut cos_sum = 0.0f64;
    for (z, f) in val_z.iter().zip(val_feats.iter()) {
        let s = student.features(z)?;
        let (loss, _) = cosine_loss(&s, f)?;
        cos_sum += 1.0 - loss as f64;
    }
    let mean_cos = (cos_sum / val_z.len() as f64) as f32;
    if mean_cos < 0.5 {
        return Err(Error::TrainingFailure(format!(
            "distillation val cosine similarity {mean_cos:.3} below the 0.5 bar"
        )));
    }
    Ok((student, mean_cos))
}

/// Train the classification head on top of a frozen student. The student
/// parameters are bit-checked before and after.
pub fn train_latent_head(
    student: &StudentEncoder,
    train_z: &[Latent],
    train_y: &[usize],
    val_z: &[Latent],
    val_y: &[usize],
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<(LatentClassifier, f32)> {
    check_dataset(train_z.len(), train_y.len(), "head train set")?;
    check_dataset(val_z.len(), val_y.len(), "head val set")?;
    let student_before = student.params.clone();
    let hspec = head_spec();
    let mut head_params = ParamStore::new();
    hspec.init_params(&mut head_params, seed);
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..train_z.len()).collect();

    // precompute frozen features once
    let mut feats = Vec::with_capacity(train_z.len());
    for z in train_z {
        feats.push(student.features(z)?);
    }

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = rng::stream_indexed(seed, "head_epoch", epoch as u64);
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch) {
            let mut grads = Gradients::new();
            for &idx in batch {
                let trace = hspec.forward(&head_params, &feats[idx])?;
                let (_, dlogits) = cross_entropy(trace.output(), train_y[idx])?;
                hspec.backward(&head_params, &trace, &dlogits, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f32);
            adam_step(&mut head_params, &grads, &mut adam)?;
        }
    }

    if !student.params.bit_equal(&student_before) {
        return Err(Error::TrainingFailure(
            "head training modified the frozen student parameters".into(),
        ));
    }
    let clf = LatentClassifier { student: student.clone(), head_params, distilled: true };
    let mut correct = 0usize;
    for (z, &y) in val_z.iter().zip(val_y.iter()) {
        if clf.predict(z)?.class_id == y {
            correct += 1;
        }
    }
    Ok((clf, correct as f32 / val_z.len() as f32))
}

/// Baseline: the same student+head architecture trained end-to-end on
/// latents with cross entropy, no distillation.
pub fn train_nondistilled(
    train_z: &[Latent],
    train_y: &[usize],
    val_z: &[Latent],
    val_y: &[usize],
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<(LatentClassifier, f32)> {
    check_dataset(train_z.len(), train_y.len(), "non-distilled train set")?;
    check_dataset(val_z.len(), val_y.len(), "non-distilled val set")?;
    let sspec = student_spec();
    let hspec = head_spec();
    let mut sparams = ParamStore::new();
    let mut hparams = ParamStore::new();
    sspec.init_params(&mut sparams, seed);
    hspec.init_params(&mut hparams, seed);
    let mut s_adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut h_adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..train_z.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = rng::stream_indexed(seed, "nondistilled_epoch", epoch as u64);
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch) {
            let mut s_grads = Gradients::new();
            let mut h_grads = Gradients::new();
            for &idx in batch {
                let s_trace = sspec.forward(&sparams, &train_z[idx].values)?;
                let h_trace = hspec.forward(&hparams, s_trace.output())?;
                let (_, dlogits) = cross_entropy(h_trace.output(), train_y[idx])?;
                let dfeat = hspec.backward(&hparams, &h_trace, &dlogits, &mut h_grads)?;
                sspec.backward(&sparams, &s_trace, &dfeat, &mut s_grads)?;
            }
            s_grads.scale(1.0 / batch.len() as f32);
            h_grads.scale(1.0 / batch.len() as f32);
            adam_step(&mut sparams, &s_grads, &mut s_adam)?;
            adam_step(&mut hparams, &h_grads, &mut h_adam)?;
        }
    }

    let clf = LatentClassifier {
        student: StudentEncoder { spec: sspec, params: sparams },
        head_params: hparams,
        distilled: false,
    };
    let mut correct = 0usize;
    for (z, &y) in val_z.iter().zip(val_y.iter()) {
        if clf.predict(z)?.class_id == y {
            correct += 1;
        }
    }
    Ok((clf, correct as f32 / val_z.len() as f32))
}
