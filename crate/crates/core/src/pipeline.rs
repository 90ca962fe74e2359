//! Orchestration: artifact layout, dataset assembly, training stages,
//! model loading, and the edit/eval/demo entry points the CLI exposes.
//!
//! Artifact layout under the configured root:
//!
//! ```text
//! corpus/   wav/*.wav, manifest.jsonl, corpus_meta.json
//! models/   stats.dtne, denoiser.dtne, teacher.dtne, student.dtne,
//!           head.dtne, nondistilled.dtne, denoiser_loss.jsonl
//! reports/  report.csv, report.json, edits/*, demo/*
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::classify::{
    classify_audio, distill_student, train_latent_head, train_nondistilled, train_teacher,
    ClassifierConfig, LatentClassifier, Prediction, StudentEncoder, TeacherClassifier,
};
use crate::config::RunConfig;
use crate::corpus::{
    self, generate_corpus, load_manifest, CorpusConfig, CorpusManifest, Split, CLIP_SAMPLES,
    NUM_CLASSES,
};
use crate::diffusion::{
    sample, train_denoiser, Condition, ConditionPlan, DenoiserNet, NoiseSchedule, SampleInit,
    TrainConfig,
};
use crate::dsp::{self, MelFilterbank, MelPatch, MelStats, PATCH_FRAMES};
use crate::edit::{edit, EditRequest, EditResult};
use crate::error::Error;
use crate::eval::{run_matrix, EmbeddingSet, MatrixConfig, MatrixInputs, MetricsReport};
use crate::latent::{decode, encode, fit_stats, Latent, LatentStats, LATENT_DIM};
use crate::nn::{load_checkpoint, save_checkpoint, Container, Tensor};
use crate::rng;
use crate::Result;

/// Training stage selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Diffusion,
    Teacher,
    Distill,
    Head,
    Nondistilled,
    All,
}

impl Stage {
    pub fn parse(name: &str) -> Result<Stage> {
        match name {
            "diffusion" => Ok(Stage::Diffusion),
            "teacher" => Ok(Stage::Teacher),
            "distill" => Ok(Stage::Distill),
            "head" => Ok(Stage::Head),
            "nondistilled" => Ok(Stage::Nondistilled),
            "all" => Ok(Stage::All),
            other => Err(Error::Config(format!("unknown training stage '{other}'"))),
        }
    }
}

/// In-memory view of the corpus with fitted stats and derived features,
/// aligned index-for-index with the manifest entries.
pub struct Dataset {
    pub manifest: CorpusManifest,
    pub fb: MelFilterbank,
    pub mel_stats: MelStats,
    pub latent_stats: LatentStats,
    pub patches: Vec<Vec<f32>>,
    pub latents: Vec<Latent>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn indices_in(&self, split: Split) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.splits[i] == split).collect()
    }

    fn patches_of(&self, idx: &[usize]) -> Vec<Vec<f32>> {
        idx.iter().map(|&i| self.patches[i].clone()).collect()
    }

    fn latents_of(&self, idx: &[usize]) -> Vec<Latent> {
        idx.iter().map(|&i| self.latents[i].clone()).collect()
    }

    fn labels_of(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Generate the corpus at the configured location.
pub fn synth(cfg: &RunConfig) -> Result<CorpusManifest> {
    let corpus_cfg = CorpusConfig {
        clips_per_instrument: cfg.clips_per_instrument,
        train_frac: cfg.train_frac,
        val_frac: cfg.val_frac,
    };
    generate_corpus(&cfg.corpus_path(), &corpus_cfg, cfg.corpus_seed, &cfg.hash())
}

/// Read every clip, fit mel and latent stats on the training split, and
/// derive patches and latents for the whole corpus. Deterministic, so
/// recomputing it at each stage reproduces identical stats.
pub fn build_dataset(manifest: CorpusManifest) -> Result<Dataset> {
    let fb = MelFilterbank::new();
    let mut raws: Vec<Vec<f32>> = Vec::with_capacity(manifest.entries.len());
    let mut labels = Vec::with_capacity(manifest.entries.len());
    let mut splits = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let samples = corpus::read_wav(&manifest.wav_path(entry))?;
        let spec = dsp::stft(&samples)?;
        raws.push(dsp::log_mel_raw(&spec, &fb));
        labels.push(entry.label);
        splits.push(entry.split);
    }
    let train_raws: Vec<Vec<f32>> = raws
        .iter()
        .zip(splits.iter())
        .filter(|(_, s)| **s == Split::Train)
        .map(|(r, _)| r.clone())
        .collect();
    let mel_stats = MelStats::fit(&train_raws)?;
    let patches: Vec<Vec<f32>> = raws
        .iter()
        .map(|r| r.iter().map(|&v| (v - mel_stats.mean) / mel_stats.std).collect())
        .collect();
    let train_patches: Vec<MelPatch> = patches
        .iter()
        .zip(splits.iter())
        .filter(|(_, s)| **s == Split::Train)
        .map(|(p, _)| MelPatch { values: p.clone() })
        .collect();
    let latent_stats = fit_stats(&train_patches)?;
    let latents: Vec<Latent> = patches
        .iter()
        .map(|p| encode(&MelPatch { values: p.clone() }, &latent_stats))
        .collect();
    Ok(Dataset { manifest, fb, mel_stats, latent_stats, patches, latents, labels, splits })
}

fn stats_path(cfg: &RunConfig) -> PathBuf {
    cfg.models_path().join("stats.dtne")
}

fn checkpoint_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.models_path().join(format!("{name}.dtne"))
}

fn save_stats(cfg: &RunConfig, dataset: &Dataset) -> Result<()> {
    let mut c = Container::new();
    c.set_meta("stage", "stats");
    c.set_meta("config_hash", cfg.hash());
    c.arrays.insert(
        "mel.mean".into(),
        Tensor { shape: vec![1], data: vec![dataset.mel_stats.mean] },
    );
    c.arrays.insert(
        "mel.std".into(),
        Tensor { shape: vec![1], data: vec![dataset.mel_stats.std] },
    );
    c.arrays.insert(
        "latent.mean".into(),
        Tensor { shape: vec![LATENT_DIM], data: dataset.latent_stats.mean.to_vec() },
    );
    c.arrays.insert(
        "latent.std".into(),
        Tensor { shape: vec![LATENT_DIM], data: dataset.latent_stats.std.to_vec() },
    );
    save_checkpoint(&stats_path(cfg), &c)
}

fn load_stats(cfg: &RunConfig) -> Result<(MelStats, LatentStats)> {
    let path = stats_path(cfg);
    if !path.exists() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    let c = load_checkpoint(&path)?;
    let mel = MelStats {
        mean: c.arrays["mel.mean"].data[0],
        std: c.arrays["mel.std"].data[0],
    };
    let mut mean = [0.0f32; LATENT_DIM];
    let mut std = [0.0f32; LATENT_DIM];
    mean.copy_from_slice(&c.arrays["latent.mean"].data);
    std.copy_from_slice(&c.arrays["latent.std"].data);
    Ok((mel, LatentStats { mean, std }))
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.display().to_string()))
    }
}

fn load_corpus_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let manifest = load_manifest(&cfg.corpus_path())?;
    build_dataset(manifest)
}

fn classifier_config(cfg: &RunConfig) -> ClassifierConfig {
    ClassifierConfig {
        epochs: cfg.classifier_epochs,
        batch: cfg.classifier_batch,
        lr: cfg.classifier_lr,
    }
}

fn save_params_checkpoint(
    cfg: &RunConfig,
    name: &str,
    stage: &str,
    params: &crate::nn::ParamStore,
    extra: &[(&str, serde_json::Value)],
) -> Result<()> {
    let mut c = Container::new();
    c.set_meta("stage", stage);
    c.set_meta("config_hash", cfg.hash());
    for (k, v) in extra {
        c.set_meta(k, v.clone());
    }
    c.insert_params("param.", params);
    save_checkpoint(&checkpoint_path(cfg, name), &c)
}

/// Run one training stage (or all of them in dependency order), writing
/// checkpoints under the models directory.
pub fn train_stage(cfg: &RunConfig, stage: Stage) -> Result<()> {
    let dataset = load_corpus_dataset(cfg)?;
    save_stats(cfg, &dataset)?;
    match stage {
        Stage::All => {
            train_stage_inner(cfg, Stage::Diffusion, &dataset)?;
            train_stage_inner(cfg, Stage::Teacher, &dataset)?;
            train_stage_inner(cfg, Stage::Distill, &dataset)?;
            train_stage_inner(cfg, Stage::Head, &dataset)?;
            train_stage_inner(cfg, Stage::Nondistilled, &dataset)
        }
        s => train_stage_inner(cfg, s, &dataset),
    }
}

fn train_stage_inner(cfg: &RunConfig, stage: Stage, dataset: &Dataset) -> Result<()> {
    let train_idx = dataset.indices_in(Split::Train);
    let val_idx = dataset.indices_in(Split::Val);
    match stage {
        Stage::Diffusion => {
            let schedule = NoiseSchedule::toy_default();
            let train_cfg = TrainConfig {
                steps: cfg.diffusion_steps,
                batch: cfg.diffusion_batch,
                lr: cfg.diffusion_lr,
                cond_dropout: cfg.cond_dropout,
            };
            let (net, loss_log) = train_denoiser(
                &dataset.latents_of(&train_idx),
                &dataset.labels_of(&train_idx),
                &schedule,
                &train_cfg,
                cfg.train_seed,
            )?;
            let mut log_file = std::io::BufWriter::new(std::fs::File::create(
                cfg.models_path().join("denoiser_loss.jsonl"),
            )?);
            for (step, loss) in &loss_log {
                writeln!(log_file, "{}", serde_json::json!({"step": step, "loss": loss}))?;
            }
            log_file.flush()?;
            let final_loss = loss_log.last().map(|(_, l)| *l).unwrap_or(f32::NAN);
            save_params_checkpoint(
                cfg,
                "denoiser",
                "denoiser",
                &net.params,
                &[("final_loss", serde_json::json!(final_loss))],
            )
        }
        Stage::Teacher => {
            // The teacher later scores decoded latents, so its training set
            // carries each clip twice: the real patch and its pooled-decoded
            // rendering. Validation stays on real patches only.
            let mut train_x = dataset.patches_of(&train_idx);
            let mut train_y = dataset.labels_of(&train_idx);
            for &i in &train_idx {
                let blocky = decode(&dataset.latents[i], &dataset.latent_stats);
                train_x.push(blocky.values);
                train_y.push(dataset.labels[i]);
            }
            let (teacher, val_acc) = train_teacher(
                &train_x,
                &train_y,
                &dataset.patches_of(&val_idx),
                &dataset.labels_of(&val_idx),
                &classifier_config(cfg),
                cfg.train_seed,
            )?;
            save_params_checkpoint(
                cfg,
                "teacher",
                "teacher",
                &teacher.params,
                &[("val_accuracy", serde_json::json!(val_acc))],
            )
        }
        Stage::Distill => {
            let teacher = load_teacher(cfg)?;
            // Distillation targets are teacher features of the decoded
            // (pooled) view, so the target is a clean function of what the
            // student can actually see in the latent.
            let feat = |idx: &[usize]| -> Result<Vec<Vec<f32>>> {
                idx.iter()
                    .map(|&i| {
                        let blocky = decode(&dataset.latents[i], &dataset.latent_stats);
                        teacher.features(&blocky.values)
                    })
                    .collect()
            };
            let (student, val_cos) = distill_student(
                &dataset.latents_of(&train_idx),
                &feat(&train_idx)?,
                &dataset.latents_of(&val_idx),
                &feat(&val_idx)?,
                &classifier_config(cfg),
                cfg.train_seed,
            )?;
            save_params_checkpoint(
                cfg,
                "student",
                "student",
                &student.params,
                &[("val_cosine", serde_json::json!(val_cos))],
            )
        }
        Stage::Head => {
            let student = load_student(cfg)?;
            let (clf, val_acc) = train_latent_head(
                &student,
                &dataset.latents_of(&train_idx),
                &dataset.labels_of(&train_idx),
                &dataset.latents_of(&val_idx),
                &dataset.labels_of(&val_idx),
                &classifier_config(cfg),
                cfg.train_seed,
            )?;
            save_params_checkpoint(
                cfg,
                "head",
                "head",
                &clf.head_params,
                &[("val_accuracy", serde_json::json!(val_acc))],
            )
        }
        Stage::Nondistilled => {
            let (clf, val_acc) = train_nondistilled(
                &dataset.latents_of(&train_idx),
                &dataset.labels_of(&train_idx),
                &dataset.latents_of(&val_idx),
                &dataset.labels_of(&val_idx),
                &classifier_config(cfg),
                cfg.train_seed,
            )?;
            let mut combined = clf.student.params.clone();
            for (name, t) in clf.head_params.iter() {
                combined.insert(name, t.clone());
            }
            save_params_checkpoint(
                cfg,
                "nondistilled",
                "nondistilled",
                &combined,
                &[("val_accuracy", serde_json::json!(val_acc))],
            )
        }
        Stage::All => unreachable!("expanded by train_stage"),
    }
}

fn load_teacher(cfg: &RunConfig) -> Result<TeacherClassifier> {
    let path = checkpoint_path(cfg, "teacher");
    require(&path)?;
    Ok(TeacherClassifier::from_params(load_checkpoint(&path)?.extract_params("param.")))
}

fn load_student(cfg: &RunConfig) -> Result<StudentEncoder> {
    let path = checkpoint_path(cfg, "student");
    require(&path)?;
    Ok(StudentEncoder::from_params(load_checkpoint(&path)?.extract_params("param.")))
}

/// Trained artifacts loaded back from disk.
pub struct Models {
    pub config_hash: String,
    pub schedule: NoiseSchedule,
    pub denoiser: DenoiserNet,
    pub teacher: TeacherClassifier,
    pub distilled: LatentClassifier,
    pub nondistilled: LatentClassifier,
    pub fb: MelFilterbank,
    pub mel_stats: MelStats,
    pub latent_stats: LatentStats,
}

impl Models {
    /// Probe function over the distilled latent classifier.
    pub fn probe(&self) -> impl Fn(&Latent) -> Prediction + '_ {
        |z: &Latent| {
            self.distilled.predict(z).expect("latent classifier forward cannot fail")
        }
    }

    /// Teacher prediction for a generated or edited latent, through the
    /// decoded mel view.
    pub fn teacher_predict_latent(&self, z: &Latent) -> Result<Prediction> {
        let patch = decode(z, &self.latent_stats);
        self.teacher.predict_patch(&patch)
    }

    pub fn teacher_predict_audio(&self, samples: &[f32]) -> Result<Prediction> {
        classify_audio(&self.teacher, samples, &self.fb, &self.mel_stats)
    }
}

/// Load every trained artifact, naming the first missing one.
pub fn load_models(cfg: &RunConfig) -> Result<Models> {
    let (mel_stats, latent_stats) = load_stats(cfg)?;
    let denoiser_path = checkpoint_path(cfg, "denoiser");
    require(&denoiser_path)?;
    let denoiser_ck = load_checkpoint(&denoiser_path)?;
    let denoiser = DenoiserNet::from_params(denoiser_ck.extract_params("param."));
    let teacher = load_teacher(cfg)?;
    let student = load_student(cfg)?;
    let head_path = checkpoint_path(cfg, "head");
    require(&head_path)?;
    let head_params = load_checkpoint(&head_path)?.extract_params("param.");
    let distilled = LatentClassifier { student, head_params, distilled: true };
    let nd_path = checkpoint_path(cfg, "nondistilled");
    require(&nd_path)?;
    let nd = load_checkpoint(&nd_path)?.extract_params("param.");
    let nondistilled = LatentClassifier {
        student: StudentEncoder::from_params(filter_params(&nd, "student.")),
        head_params: filter_params(&nd, "head."),
        distilled: false,
    };
    Ok(Models {
        config_hash: denoiser_ck.meta_str("config_hash").unwrap_or_default().to_string(),
        schedule: NoiseSchedule::toy_default(),
        denoiser,
        teacher,
        distilled,
        nondistilled,
        fb: MelFilterbank::new(),
        mel_stats,
        latent_stats,
    })
}

fn filter_params(store: &crate::nn::ParamStore, prefix: &str) -> crate::nn::ParamStore {
    let mut out = crate::nn::ParamStore::new();
    for (name, t) in store.iter() {
        if name.starts_with(prefix) {
            out.insert(name, t.clone());
        }
    }
    out
}

/// Conditionally generate `count` latents for one instrument class.
pub fn generate_class_samples(
    models: &Models,
    cfg: &RunConfig,
    class_id: usize,
    count: usize,
) -> Result<Vec<Latent>> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let seed: u64 = rng::stream_indexed(
            cfg.eval_seed,
            "class_sample",
            (class_id * 100000 + i) as u64,
        )
        .gen();
        let traj = sample(
            &models.denoiser,
            &models.schedule,
            SampleInit::Seed(seed),
            ConditionPlan::Constant(Condition::Instrument(class_id)),
            cfg.guidance,
            None,
        )?;
        out.push(traj.output().clone());
    }
    Ok(out)
}

/// Teacher-feature reference sets per instrument over the training split.
pub fn reference_embeddings(models: &Models, dataset: &Dataset) -> Result<Vec<EmbeddingSet>> {
    let mut per_class: Vec<Vec<Vec<f32>>> = vec![Vec::new(); NUM_CLASSES];
    for i in dataset.indices_in(Split::Train) {
        let feats = models.teacher.features(&dataset.patches[i])?;
        per_class[dataset.labels[i]].push(feats);
    }
    per_class
        .into_iter()
        .enumerate()
        .map(|(c, rows)| EmbeddingSet::new(rows, &format!("train_{}", corpus::instrument_name(c))))
        .collect()
}

/// Run the full evaluation matrix and write `report.csv` / `report.json`.
pub fn run_eval(cfg: &RunConfig) -> Result<MetricsReport> {
    let models = load_models(cfg)?;
    let dataset = load_corpus_dataset(cfg)?;
    let references = reference_embeddings(&models, &dataset)?;
    let matrix_cfg = MatrixConfig {
        seeds_per_pair: cfg.seeds_per_pair,
        strategies: cfg.parsed_strategies()?,
        guidance: cfg.guidance,
        fallback: cfg.fallback_policy()?,
        min_confidence: cfg.min_confidence,
        eval_seed: cfg.eval_seed,
        workers: cfg.eval_workers,
        config_hash: cfg.hash(),
    };
    let inputs = MatrixInputs {
        net: &models.denoiser,
        schedule: &models.schedule,
        probe: &models.distilled,
        teacher: &models.teacher,
        fb: &models.fb,
        mel_stats: &models.mel_stats,
        latent_stats: &models.latent_stats,
        references: &references,
    };
    let report = run_matrix(&inputs, &matrix_cfg)?;
    let reports = cfg.reports_path();
    report.write(&reports.join("report.csv"), &reports.join("report.json"))?;
    Ok(report)
}

fn emit_latent_artifacts(
    models: &Models,
    cfg: &RunConfig,
    latent: &Latent,
    dir: &Path,
    stem: &str,
    meta: &serde_json::Map<String, serde_json::Value>,
) -> Result<MelPatch> {
    let patch = decode(latent, &models.latent_stats);
    dsp::export_png(&dir.join(format!("{stem}.png")), 32, 32, &patch.values, meta)?;
    let spec = dsp::patch_to_spectrogram(
        &patch,
        &models.fb,
        &models.mel_stats,
        dsp::num_frames(CLIP_SAMPLES),
    );
    let audio = dsp::griffin_lim(&spec, CLIP_SAMPLES, cfg.griffin_lim_iterations, cfg.demo_seed)?;
    corpus::write_wav(&dir.join(format!("{stem}.wav")), &audio)?;
    Ok(patch)
}

/// Full edit run: two-pass edit, decoded views, audio demos, and a JSON
/// record of the decision and metrics.
pub fn run_edit(cfg: &RunConfig, req: &EditRequest) -> Result<(EditResult, serde_json::Value)> {
    let models = load_models(cfg)?;
    let probe = models.probe();
    let result = edit(req, &models.denoiser, &models.schedule, &probe)?;

    let dir = cfg.reports_path().join("edits");
    std::fs::create_dir_all(&dir)?;
    let stem = format!(
        "edit_seed{}_{}_to_{}_{}",
        req.seed,
        corpus::instrument_name(req.source),
        corpus::instrument_name(req.target),
        req.strategy.name()
    );
    let mut png_meta = serde_json::Map::new();
    png_meta.insert("config_hash".into(), cfg.hash().into());
    let edited_patch =
        emit_latent_artifacts(&models, cfg, &result.edited, &dir, &stem, &png_meta)?;
    let source_patch = emit_latent_artifacts(
        &models,
        cfg,
        &result.source_output,
        &dir,
        &format!("{stem}_source"),
        &png_meta,
    )?;

    let chroma = crate::eval::chroma_distance(
        &dsp::chromagram(&dsp::patch_to_spectrogram(
            &edited_patch,
            &models.fb,
            &models.mel_stats,
            PATCH_FRAMES,
        )),
        &dsp::chromagram(&dsp::patch_to_spectrogram(
            &source_patch,
            &models.fb,
            &models.mel_stats,
            PATCH_FRAMES,
        )),
    )?;
    let teacher_pred = models.teacher.predict_patch(&edited_patch)?;

    let record = serde_json::json!({
        "seed": req.seed,
        "src": corpus::instrument_name(req.source),
        "tgt": corpus::instrument_name(req.target),
        "strategy": req.strategy.name(),
        "t_star": result.decision.t_star,
        "status": result.decision.status.name(),
        "trace": result.decision.trace.iter().map(|p| {
            serde_json::json!({"class": p.class_id, "confidence": p.confidence})
        }).collect::<Vec<_>>(),
        "metrics": {
            "chroma_distance": chroma,
            "teacher_prediction": teacher_pred.class_id,
            "teacher_predicted_name": corpus::instrument_name(teacher_pred.class_id),
            "teacher_correct": teacher_pred.class_id == req.target,
        },
        "config_hash": cfg.hash(),
    });
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(&record)?)?;
    Ok((result, record))
}

/// Timestep sweep for one pair and seed: swap at each configured step,
/// emit per-step images and audio plus a labeled grid, and record metrics.
pub fn run_demo(cfg: &RunConfig) -> Result<serde_json::Value> {
    let models = load_models(cfg)?;
    let dir = cfg.reports_path().join("demo");
    std::fs::create_dir_all(&dir)?;
    let mut png_meta = serde_json::Map::new();
    png_meta.insert("config_hash".into(), cfg.hash().into());

    let source_traj = sample(
        &models.denoiser,
        &models.schedule,
        SampleInit::Seed(cfg.demo_seed),
        ConditionPlan::Constant(Condition::Instrument(cfg.demo_source)),
        cfg.guidance,
        None,
    )?;
    let source_patch = emit_latent_artifacts(
        &models,
        cfg,
        source_traj.output(),
        &dir,
        "source",
        &png_meta,
    )?;
    let source_chroma = dsp::chromagram(&dsp::patch_to_spectrogram(
        &source_patch,
        &models.fb,
        &models.mel_stats,
        PATCH_FRAMES,
    ));

    let mut entries = Vec::new();
    let mut grid_patches: Vec<(String, MelPatch)> = vec![("source".into(), source_patch)];
    for &t_star in &cfg.demo_swaps {
        let edited = crate::edit::regenerate_with_swap(
            &models.denoiser,
            &models.schedule,
            cfg.demo_seed,
            cfg.demo_source,
            cfg.demo_target,
            t_star,
            cfg.guidance,
        )?;
        let stem = format!("swap_t{t_star:02}");
        let patch =
            emit_latent_artifacts(&models, cfg, edited.output(), &dir, &stem, &png_meta)?;
        let chroma = crate::eval::chroma_distance(
            &dsp::chromagram(&dsp::patch_to_spectrogram(
                &patch,
                &models.fb,
                &models.mel_stats,
                PATCH_FRAMES,
            )),
            &source_chroma,
        )?;
        let pred = models.teacher.predict_patch(&patch)?;
        let latent_l2 = edited.output().l2_distance(source_traj.output());
        entries.push(serde_json::json!({
            "t_star": t_star,
            "chroma_distance": chroma,
            "teacher_prediction": pred.class_id,
            "teacher_predicted_name": corpus::instrument_name(pred.class_id),
            "latent_l2_to_source": latent_l2,
        }));
        grid_patches.push((stem, patch));
    }

    // labeled image grid: patches side by side with separator columns
    let cols_per = PATCH_FRAMES + 1;
    let total_cols = grid_patches.len() * cols_per - 1;
    let mut grid = vec![0.0f32; 32 * total_cols];
    let mut labels = Vec::new();
    for (i, (label, patch)) in grid_patches.iter().enumerate() {
        let base = i * cols_per;
        for r in 0..32 {
            for c in 0..PATCH_FRAMES {
                grid[r * total_cols + base + c] = patch.at(r, c);
            }
        }
        labels.push(serde_json::json!({"column": base, "label": label}));
    }
    let mut grid_meta = png_meta.clone();
    grid_meta.insert("panels".into(), serde_json::Value::Array(labels));
    dsp::export_png(&dir.join("grid.png"), 32, total_cols, &grid, &grid_meta)?;

    let record = serde_json::json!({
        "seed": cfg.demo_seed,
        "src": corpus::instrument_name(cfg.demo_source),
        "tgt": corpus::instrument_name(cfg.demo_target),
        "swaps": entries,
        "config_hash": cfg.hash(),
    });
    std::fs::write(dir.join("demo.json"), serde_json::to_vec_pretty(&record)?)?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_parse() {
        assert_eq!(Stage::parse("all").unwrap(), Stage::All);
        assert_eq!(Stage::parse("diffusion").unwrap(), Stage::Diffusion);
        assert_eq!(Stage::parse("nondistilled").unwrap(), Stage::Nondistilled);
        assert!(Stage::parse("bogus").is_err());
    }

    #[test]
    fn missing_corpus_is_a_missing_artifact() {
        let mut cfg = RunConfig::default();
        cfg.root = std::env::temp_dir().join("tl_pipeline_missing");
        match train_stage(&cfg, Stage::Teacher) {
            Err(Error::MissingArtifact(_)) => {}
            other => panic!("expected missing artifact, got {other:?}"),
        }
    }
}
