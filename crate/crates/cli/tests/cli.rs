//! CLI behavior: exit codes, help coverage, and a small end-to-end run.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_timbrelab"))
}

fn test_root(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tl_cli_{tag}"));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    dir
}

fn write_small_config(dir: &Path) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let path = dir.join("run.ini");
    std::fs::write(
        &path,
        format!(
            "root = {}\nclips_per_instrument = 50\ndiffusion_steps = 600\nclassifier_epochs = 20\nseeds_per_pair = 1\n",
            dir.display()
        ),
    )
    .unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

#[test]
fn help_lists_every_subcommand() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["synth", "train", "edit", "eval", "demo"] {
        assert!(text.contains(sub), "help missing '{sub}'");
    }
    // every subcommand enumerates its flags
    let edit_help = run(&["edit", "--help"]);
    let text = String::from_utf8_lossy(&edit_help.stdout);
    for flag in ["--seed", "--src", "--tgt", "--strategy", "--fallback"] {
        assert!(text.contains(flag), "edit help missing '{flag}'");
    }
}

#[test]
fn usage_errors_exit_with_code_2() {
    let root = test_root("usage");
    // same source and target
    let out = run(&[
        "--root",
        root.to_str().unwrap(),
        "edit",
        "--seed",
        "1",
        "--src",
        "organ",
        "--tgt",
        "organ",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("category=config"), "got: {err}");

    // unknown strategy
    let out = run(&[
        "--root",
        root.to_str().unwrap(),
        "edit",
        "--seed",
        "1",
        "--src",
        "organ",
        "--tgt",
        "bell",
        "--strategy",
        "bogus",
    ]);
    assert_eq!(out.status.code(), Some(2));

    // malformed config file
    let dir = test_root("badcfg");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("bad.ini");
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "synth"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_artifacts_exit_with_code_3() {
    let root = test_root("missing");
    let out = run(&["--root", root.to_str().unwrap(), "train", "--stage", "teacher"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("category=missing_artifact"), "got: {err}");

    let out = run(&["--root", root.to_str().unwrap(), "eval"]);
    assert_eq!(out.status.code(), Some(3));
    let out = run(&[
        "--root",
        root.to_str().unwrap(),
        "edit",
        "--seed",
        "1",
        "--src",
        "organ",
        "--tgt",
        "bell",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn small_pipeline_end_to_end() {
    let root = test_root("e2e");
    let cfg = write_small_config(&root);
    let cfg = cfg.to_str().unwrap();

    let out = run(&["--config", cfg, "synth"]);
    assert!(out.status.success(), "synth failed: {}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("corpus/manifest.jsonl").exists());

    // synth is idempotent: rerunning yields identical bytes
    let manifest_before = std::fs::read(root.join("corpus/manifest.jsonl")).unwrap();
    assert!(run(&["--config", cfg, "synth"]).status.success());
    assert_eq!(manifest_before, std::fs::read(root.join("corpus/manifest.jsonl")).unwrap());

    let out = run(&["--config", cfg, "train", "--stage", "all"]);
    assert!(out.status.success(), "train failed: {}", String::from_utf8_lossy(&out.stderr));
    for name in ["stats", "denoiser", "teacher", "student", "head", "nondistilled"] {
        assert!(root.join(format!("models/{name}.dtne")).exists(), "missing {name}");
    }

    // partial retraining against existing artifacts also works
    let out = run(&["--config", cfg, "train", "--stage", "head"]);
    assert!(out.status.success());

    let out = run(&["--config", cfg, "eval", "--workers", "2"]);
    assert!(out.status.success(), "eval failed: {}", String::from_utf8_lossy(&out.stderr));
    let csv1 = std::fs::read(root.join("reports/report.csv")).unwrap();
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(root.join("reports/report.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 30 * 3, "30 pairs x 1 seed x 3 strategies");

    // rerunning eval reproduces the report byte for byte
    assert!(run(&["--config", cfg, "eval"]).status.success());
    assert_eq!(csv1, std::fs::read(root.join("reports/report.csv")).unwrap());

    let out = run(&[
        "--config", cfg, "edit", "--seed", "7", "--src", "organ", "--tgt", "strings",
    ]);
    assert!(out.status.success(), "edit failed: {}", String::from_utf8_lossy(&out.stderr));
    let edits = root.join("reports/edits");
    let record_path = edits.join("edit_seed7_organ_to_strings_last_change.json");
    assert!(record_path.exists());
    let record: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&record_path).unwrap()).unwrap();
    assert_eq!(record["trace"].as_array().unwrap().len(), 50);
    assert!(record["config_hash"].is_string());
    assert!(edits.join("edit_seed7_organ_to_strings_last_change.wav").exists());
    assert!(edits.join("edit_seed7_organ_to_strings_last_change.png").exists());
    assert!(edits.join("edit_seed7_organ_to_strings_last_change_source.wav").exists());
    assert!(edits.join("edit_seed7_organ_to_strings_last_change_source.png").exists());
    assert!(root.join("models/denoiser_loss.jsonl").exists());

    let out = run(&["--config", cfg, "demo", "--swaps", "44,25,9,0"]);
    assert!(out.status.success(), "demo failed: {}", String::from_utf8_lossy(&out.stderr));
    let demo: serde_json::Value =
        serde_json::from_slice(&std::fs::read(root.join("reports/demo/demo.json")).unwrap())
            .unwrap();
    assert_eq!(demo["swaps"].as_array().unwrap().len(), 4);
    assert!(root.join("reports/demo/grid.png").exists());
    assert!(root.join("reports/demo/swap_t25.wav").exists());
}
