//! Run configuration: defaulted fields, a flat key=value file format with
//! unknown keys rejected, and a stable hash of the canonical serialization
//! recorded into every output artifact.

use std::path::{Path, PathBuf};

use crate::edit::{FallbackPolicy, Strategy};
use crate::error::Error;
use crate::rng::fnv1a64;
use crate::Result;

/// Environment variable overriding the root artifact directory.
pub const ROOT_ENV_VAR: &str = "TIMBRELAB_ROOT";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Root artifact directory; the three subdirectories live under it.
    pub root: PathBuf,
    pub corpus_dir: String,
    pub models_dir: String,
    pub reports_dir: String,

    pub corpus_seed: u64,
    pub train_seed: u64,
    pub eval_seed: u64,

    pub clips_per_instrument: usize,
    pub train_frac: f64,
    pub val_frac: f64,

    pub diffusion_steps: usize,
    pub diffusion_batch: usize,
    pub diffusion_lr: f32,
    pub cond_dropout: f32,
    pub guidance: f32,

    pub classifier_epochs: usize,
    pub classifier_batch: usize,
    pub classifier_lr: f32,

    pub online_window: usize,
    pub fallback: String,
    pub min_confidence: f32,

    pub seeds_per_pair: usize,
    pub strategies: String,
    pub eval_workers: usize,

    pub demo_seed: u64,
    pub demo_source: usize,
    pub demo_target: usize,
    pub demo_swaps: Vec<usize>,
    pub griffin_lim_iterations: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            root: PathBuf::from("artifacts"),
            corpus_dir: "corpus".into(),
            models_dir: "models".into(),
            reports_dir: "reports".into(),
            corpus_seed: 11,
            train_seed: 17,
            eval_seed: 23,
            clips_per_instrument: 300,
            train_frac: 0.9,
            val_frac: 0.1,
            diffusion_steps: 30000,
            diffusion_batch: 64,
            diffusion_lr: 1e-3,
            cond_dropout: 0.1,
            guidance: 1.5,
            classifier_epochs: 20,
            classifier_batch: 64,
            classifier_lr: 1e-3,
            online_window: 5,
            fallback: "midpoint".into(),
            min_confidence: 0.0,
            seeds_per_pair: 5,
            strategies: "last_change,random,midpoint".into(),
            eval_workers: 1,
            demo_seed: 101,
            demo_source: 1,
            demo_target: 4,
            demo_swaps: vec![44, 39, 30, 25, 21, 12, 9, 4, 0],
            griffin_lim_iterations: 32,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for key '{key}'")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|v| parse::<usize>(key, v))
        .collect()
}

impl RunConfig {
    /// Apply a single key=value setting; unknown keys are rejected.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "root" => self.root = PathBuf::from(value.trim()),
            "corpus_dir" => self.corpus_dir = value.trim().to_string(),
            "models_dir" => self.models_dir = value.trim().to_string(),
            "reports_dir" => self.reports_dir = value.trim().to_string(),
            "corpus_seed" => self.corpus_seed = parse(key, value)?,
            "train_seed" => self.train_seed = parse(key, value)?,
            "eval_seed" => self.eval_seed = parse(key, value)?,
            "clips_per_instrument" => self.clips_per_instrument = parse(key, value)?,
            "train_frac" => self.train_frac = parse(key, value)?,
            "val_frac" => self.val_frac = parse(key, value)?,
            "diffusion_steps" => self.diffusion_steps = parse(key, value)?,
            "diffusion_batch" => self.diffusion_batch = parse(key, value)?,
            "diffusion_lr" => self.diffusion_lr = parse(key, value)?,
            "cond_dropout" => self.cond_dropout = parse(key, value)?,
            "guidance" => self.guidance = parse(key, value)?,
            "classifier_epochs" => self.classifier_epochs = parse(key, value)?,
            "classifier_batch" => self.classifier_batch = parse(key, value)?,
            "classifier_lr" => self.classifier_lr = parse(key, value)?,
            "online_window" => self.online_window = parse(key, value)?,
            "fallback" => self.fallback = value.trim().to_string(),
            "min_confidence" => self.min_confidence = parse(key, value)?,
            "seeds_per_pair" => self.seeds_per_pair = parse(key, value)?,
            "strategies" => self.strategies = value.trim().to_string(),
            "eval_workers" => self.eval_workers = parse(key, value)?,
            "demo_seed" => self.demo_seed = parse(key, value)?,
            "demo_source" => self.demo_source = parse(key, value)?,
            "demo_target" => self.demo_target = parse(key, value)?,
            "demo_swaps" => self.demo_swaps = parse_list(key, value)?,
            "griffin_lim_iterations" => self.griffin_lim_iterations = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parse a flat key=value file. Blank lines and `#`/`;` comments are
    /// skipped; section headers are not part of the format.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if line.starts_with('[') {
                return Err(Error::Config(format!(
                    "line {}: sections are not supported in the flat config format",
                    lineno + 1
                )));
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key=value", lineno + 1)));
            };
            cfg.apply_kv(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        FallbackPolicy::parse(&self.fallback)?;
        self.parsed_strategies()?;
        if self.online_window == 0 {
            return Err(Error::Config("online_window must be at least 1".into()));
        }
        if self.train_frac < 0.0 || self.val_frac < 0.0 || self.train_frac + self.val_frac > 1.0 {
            return Err(Error::Config("split fractions must be nonnegative and sum to <= 1".into()));
        }
        if self.guidance < 0.0 {
            return Err(Error::Config("guidance must be nonnegative".into()));
        }
        if self.demo_source == self.demo_target {
            return Err(Error::Config("demo source and target must differ".into()));
        }
        Ok(())
    }

    pub fn parsed_strategies(&self) -> Result<Vec<Strategy>> {
        self.strategies
            .split(',')
            .map(|s| Strategy::parse(s.trim(), self.online_window))
            .collect()
    }

    pub fn fallback_policy(&self) -> Result<FallbackPolicy> {
        FallbackPolicy::parse(&self.fallback)
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.root.join(&self.corpus_dir)
    }

    pub fn models_path(&self) -> PathBuf {
        self.root.join(&self.models_dir)
    }

    pub fn reports_path(&self) -> PathBuf {
        self.root.join(&self.reports_dir)
    }

    /// Canonical serialization: sorted key=value lines. Path fields are
    /// excluded so the hash identifies the experiment parameters, not where
    /// its artifacts happen to live.
    pub fn canonical_text(&self) -> String {
        let swaps =
            self.demo_swaps.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        let mut kv: Vec<(&str, String)> = vec![
            ("corpus_seed", self.corpus_seed.to_string()),
            ("train_seed", self.train_seed.to_string()),
            ("eval_seed", self.eval_seed.to_string()),
            ("clips_per_instrument", self.clips_per_instrument.to_string()),
            ("train_frac", self.train_frac.to_string()),
            ("val_frac", self.val_frac.to_string()),
            ("diffusion_steps", self.diffusion_steps.to_string()),
            ("diffusion_batch", self.diffusion_batch.to_string()),
            ("diffusion_lr", self.diffusion_lr.to_string()),
            ("cond_dropout", self.cond_dropout.to_string()),
            ("guidance", self.guidance.to_string()),
            ("classifier_epochs", self.classifier_epochs.to_string()),
            ("classifier_batch", self.classifier_batch.to_string()),
            ("classifier_lr", self.classifier_lr.to_string()),
            ("online_window", self.online_window.to_string()),
            ("fallback", self.fallback.clone()),
            ("min_confidence", self.min_confidence.to_string()),
            ("seeds_per_pair", self.seeds_per_pair.to_string()),
            ("strategies", self.strategies.clone()),
            ("eval_workers", self.eval_workers.to_string()),
            ("demo_seed", self.demo_seed.to_string()),
            ("demo_source", self.demo_source.to_string()),
            ("demo_target", self.demo_target.to_string()),
            ("demo_swaps", swaps),
            ("griffin_lim_iterations", self.griffin_lim_iterations.to_string()),
        ];
        kv.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Stable digest of the canonical text.
    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.canonical_text().as_bytes()))
    }
}
