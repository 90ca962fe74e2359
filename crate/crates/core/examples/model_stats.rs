//! Trained-model diagnostics: classification accuracy on conditional
//! samples, generated-latent population statistics, and probe-trace
//! change statistics.
//!
//! Usage: cargo run --release --example model_stats [root] [guidance]

use timbrelab::config::RunConfig;
use timbrelab::corpus::NUM_CLASSES;
use timbrelab::edit::{probe_trajectory, select_timestep_last_change};
use timbrelab::latent::decode;
use timbrelab::pipeline::{generate_class_samples, load_models};

fn main() {
    let mut cfg = RunConfig::default();
    if let Some(root) = std::env::args().nth(1) {
        cfg.root = root.into();
    }
    if let Some(w) = std::env::args().nth(2) {
        cfg.guidance = w.parse().unwrap();
        println!("guidance = {}", cfg.guidance);
    }
    let models = load_models(&cfg).unwrap();

    // classification of conditional samples (20 per class)
    let mut teacher_ok = 0;
    let mut distilled_ok = 0;
    let mut nondistilled_ok = 0;
    let mut n = 0;
    let mut per_class = [(0u32, 0u32, 0u32); NUM_CLASSES];
    let mut mean = vec![0.0f64; 64];
    let mut var = vec![0.0f64; 64];
    for class in 0..NUM_CLASSES {
        let samples = generate_class_samples(&models, &cfg, class, 20).unwrap();
        for z in &samples {
            let patch = decode(z, &models.latent_stats);
            if models.teacher.predict_patch(&patch).unwrap().class_id == class {
                teacher_ok += 1;
                per_class[class].0 += 1;
            }
            if models.distilled.predict(z).unwrap().class_id == class {
                distilled_ok += 1;
                per_class[class].1 += 1;
            }
            if models.nondistilled.predict(z).unwrap().class_id == class {
                nondistilled_ok += 1;
                per_class[class].2 += 1;
            }
            n += 1;
            for (i, &v) in z.values.iter().enumerate() {
                mean[i] += v as f64;
                var[i] += (v as f64) * (v as f64);
            }
        }
    }
    println!(
        "generated accuracy over {n}: teacher {:.3} distilled {:.3} nondistilled {:.3}",
        teacher_ok as f64 / n as f64,
        distilled_ok as f64 / n as f64,
        nondistilled_ok as f64 / n as f64
    );
    println!("per-class (teacher/distilled/nondistilled):");
    for class in 0..NUM_CLASSES {
        let t = per_class[class];
        println!(
            "  class {class}: {:.2} / {:.2} / {:.2}",
            t.0 as f64 / 20.0,
            t.1 as f64 / 20.0,
            t.2 as f64 / 20.0
        );
    }
    let mut worst_mean = 0.0f64;
    let (mut min_std, mut max_std) = (f64::INFINITY, 0.0f64);
    let mut overall = 0.0f64;
    for i in 0..64 {
        let m = mean[i] / n as f64;
        let s = (var[i] / n as f64 - m * m).max(0.0).sqrt();
        overall += m / 64.0;
        worst_mean = worst_mean.max(m.abs());
        min_std = min_std.min(s);
        max_std = max_std.max(s);
    }
    println!(
        "generated latent stats: overall mean {overall:.4}, worst coord |mean| {worst_mean:.3}, std in [{min_std:.3}, {max_std:.3}]"
    );

    // probe traces: how often does the prediction change, and where?
    let probe = models.probe();
    let mut changes = 0usize;
    let mut no_change = 0usize;
    let mut t_stars = Vec::new();
    for source in 0..NUM_CLASSES {
        for seed in 0..10u64 {
            let traj = probe_trajectory(
                &models.denoiser,
                &models.schedule,
                &probe,
                9000 + source as u64 * 100 + seed,
                source,
                cfg.guidance,
            )
            .unwrap();
            let ids = traj.predicted_classes().unwrap();
            match select_timestep_last_change(&ids) {
                Some(t) => {
                    changes += 1;
                    t_stars.push(t);
                }
                None => no_change += 1,
            }
        }
    }
    t_stars.sort_unstable();
    println!("traces: {changes} changed, {no_change} constant");
    if !t_stars.is_empty() {
        println!(
            "t* quantiles: min {} p25 {} median {} p75 {} max {}",
            t_stars[0],
            t_stars[t_stars.len() / 4],
            t_stars[t_stars.len() / 2],
            t_stars[3 * t_stars.len() / 4],
            t_stars[t_stars.len() - 1]
        );
    }
}
