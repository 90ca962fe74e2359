//! Command-line front end: corpus synthesis, stage training, single edits,
//! the evaluation matrix, and the timestep-sweep demo.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use timbrelab::config::{RunConfig, ROOT_ENV_VAR};
use timbrelab::corpus::instrument_id;
use timbrelab::edit::{EditRequest, FallbackPolicy, Strategy};
use timbrelab::pipeline::{self, Stage};
use timbrelab::Error;

#[derive(Parser)]
#[command(name = "timbrelab", version, about = "Desk-scale diffusion timbre editing lab")]
struct Cli {
    /// Flat key=value config file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root artifact directory (overrides the config file and TIMBRELAB_ROOT).
    #[arg(long, global = true)]
    root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic instrument corpus (WAV files + manifest).
    Synth,
    /// Train model stages; `all` runs them in dependency order.
    Train {
        /// One of: diffusion, teacher, distill, head, nondistilled, all.
        #[arg(long, default_value = "all")]
        stage: String,
    },
    /// Generate under the source instrument, pick a swap step, regenerate
    /// with the target. Emits WAVs, PNGs, and a JSON record.
    Edit {
        #[arg(long)]
        seed: u64,
        /// Source instrument (name or class id).
        #[arg(long)]
        src: String,
        /// Target instrument (name or class id).
        #[arg(long)]
        tgt: String,
        /// Swap strategy: last_change, online, random, midpoint.
        #[arg(long)]
        strategy: Option<String>,
        /// Policy when the trace never changes: midpoint or error.
        #[arg(long)]
        fallback: Option<String>,
    },
    /// Run the full pairwise evaluation matrix and write report files.
    Eval {
        /// Worker threads for matrix rows.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Timestep sweep for one pair and seed: swap at each configured step.
    Demo {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        src: Option<String>,
        #[arg(long)]
        tgt: Option<String>,
        /// Comma-separated swap step list, e.g. 44,25,9,0.
        #[arg(long)]
        swaps: Option<String>,
    },
}

fn error_category(e: &Error) -> &'static str {
    match e {
        Error::Config(_) | Error::InvalidInput(_) => "config",
        Error::MissingArtifact(_) => "missing_artifact",
        Error::TrainingFailure(_) | Error::NonFinite(_) => "training_failure",
        Error::Io(_) | Error::Wav(_) => "io",
        Error::NoPredictionChange { .. } => "no_change",
        _ => "internal",
    }
}

fn error_exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) => 2,
        Error::MissingArtifact(_) => 3,
        Error::TrainingFailure(_) | Error::NonFinite(_) => 4,
        Error::Io(_) | Error::Wav(_) => 5,
        _ => 1,
    }
}

fn parse_instrument(s: &str) -> Result<usize, Error> {
    if let Some(id) = instrument_id(s) {
        return Ok(id);
    }
    s.parse::<usize>()
        .ok()
        .filter(|&id| id < timbrelab::corpus::NUM_CLASSES)
        .ok_or_else(|| Error::InvalidInput(format!("unknown instrument '{s}'")))
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Ok(env_root) = std::env::var(ROOT_ENV_VAR) {
        cfg.root = PathBuf::from(env_root);
    }
    if let Some(root) = &cli.root {
        cfg.root = root.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Synth => {
            let manifest = pipeline::synth(&cfg)?;
            println!(
                "corpus: {} clips under {} (config {})",
                manifest.entries.len(),
                cfg.corpus_path().display(),
                cfg.hash()
            );
        }
        Command::Train { stage } => {
            let stage = Stage::parse(&stage)?;
            pipeline::train_stage(&cfg, stage)?;
            println!(
                "training complete: checkpoints under {} (config {})",
                cfg.models_path().display(),
                cfg.hash()
            );
        }
        Command::Edit { seed, src, tgt, strategy, fallback } => {
            let strategy = match strategy {
                Some(s) => Strategy::parse(&s, cfg.online_window)?,
                None => Strategy::LastChange,
            };
            let fallback = match fallback {
                Some(f) => FallbackPolicy::parse(&f)?,
                None => cfg.fallback_policy()?,
            };
            let req = EditRequest {
                seed,
                source: parse_instrument(&src)?,
                target: parse_instrument(&tgt)?,
                guidance: cfg.guidance,
                strategy,
                fallback,
                min_confidence: cfg.min_confidence,
            };
            req.validate()?;
            let (result, record) = pipeline::run_edit(&cfg, &req)?;
            println!(
                "edit: t*={:?} status={} -> {}",
                result.decision.t_star,
                result.decision.status.name(),
                cfg.reports_path().join("edits").display()
            );
            println!("{}", pretty(&record));
        }
        Command::Eval { workers } => {
            let mut cfg = cfg;
            if let Some(w) = workers {
                cfg.eval_workers = w.max(1);
            }
            let report = pipeline::run_eval(&cfg)?;
            print!("{}", report.to_csv());
            println!(
                "reports written under {} (config {})",
                cfg.reports_path().display(),
                cfg.hash()
            );
        }
        Command::Demo { seed, src, tgt, swaps } => {
            let mut cfg = cfg;
            if let Some(s) = seed {
                cfg.demo_seed = s;
            }
            if let Some(s) = src {
                cfg.demo_source = parse_instrument(&s)?;
            }
            if let Some(t) = tgt {
                cfg.demo_target = parse_instrument(&t)?;
            }
            if let Some(list) = swaps {
                cfg.apply_kv("demo_swaps", &list)?;
            }
            cfg.validate()?;
            let record = pipeline::run_demo(&cfg)?;
            println!("{}", pretty(&record));
            println!("demo written under {}", cfg.reports_path().join("demo").display());
        }
    }
    Ok(())
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).unwrap_or_else(|_| v.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: category={} {}", error_category(&e), e);
            ExitCode::from(error_exit_code(&e))
        }
    }
}
