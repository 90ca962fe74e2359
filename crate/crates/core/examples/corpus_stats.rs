//! Corpus diagnostics: nearest-centroid separability on patches and
//! latents, class band profiles, and teacher trainability.
//!
//! Usage: cargo run --release --example corpus_stats [corpus_dir]

use timbrelab::classify::{train_teacher, ClassifierConfig};
use timbrelab::corpus::{load_manifest, Split, NUM_CLASSES};
use timbrelab::pipeline::build_dataset;

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "artifacts/corpus".into());
    let manifest = load_manifest(std::path::Path::new(&dir)).unwrap();
    let ds = build_dataset(manifest).unwrap();
    let train_idx = ds.indices_in(Split::Train);
    let val_idx = ds.indices_in(Split::Val);
    println!("train {} val {}", train_idx.len(), val_idx.len());

    // nearest-centroid on patches
    let mut centroids = vec![vec![0.0f64; ds.patches[0].len()]; NUM_CLASSES];
    let mut counts = vec![0usize; NUM_CLASSES];
    for &i in &train_idx {
        counts[ds.labels[i]] += 1;
        for (c, v) in centroids[ds.labels[i]].iter_mut().zip(ds.patches[i].iter()) {
            *c += *v as f64;
        }
    }
    for (c, n) in centroids.iter_mut().zip(counts.iter()) {
        for v in c.iter_mut() { *v /= *n as f64; }
    }
    let mut nc_correct = 0;
    let mut confusion = vec![vec![0usize; NUM_CLASSES]; NUM_CLASSES];
    for &i in &val_idx {
        let mut best = (0usize, f64::INFINITY);
        for (k, c) in centroids.iter().enumerate() {
            let d: f64 = c.iter().zip(ds.patches[i].iter()).map(|(a, &b)| (a - b as f64).powi(2)).sum();
            if d < best.1 { best = (k, d); }
        }
        confusion[ds.labels[i]][best.0] += 1;
        if best.0 == ds.labels[i] { nc_correct += 1; }
    }
    println!("patch nearest-centroid val acc: {:.3}", nc_correct as f64 / val_idx.len() as f64);
    println!("nc confusion (rows=true): {confusion:?}");

    // nearest-centroid on latents
    let mut zc = vec![vec![0.0f64; 64]; NUM_CLASSES];
    for &i in &train_idx {
        for (c, v) in zc[ds.labels[i]].iter_mut().zip(ds.latents[i].values.iter()) {
            *c += *v as f64;
        }
    }
    for (c, n) in zc.iter_mut().zip(counts.iter()) {
        for v in c.iter_mut() { *v /= *n as f64; }
    }
    let mut zc_correct = 0;
    for &i in &val_idx {
        let mut best = (0usize, f64::INFINITY);
        for (k, c) in zc.iter().enumerate() {
            let d: f64 = c.iter().zip(ds.latents[i].values.iter()).map(|(a, &b)| (a - b as f64).powi(2)).sum();
            if d < best.1 { best = (k, d); }
        }
        if best.0 == ds.labels[i] { zc_correct += 1; }
    }
    println!("latent nearest-centroid val acc: {:.3}", zc_correct as f64 / val_idx.len() as f64);


    // time-averaged mel band profile per class (what the pooled latent sees)
    for class_id in 0..NUM_CLASSES {
        let mut profile = vec![0.0f64; 32];
        let mut n = 0;
        for &i in &train_idx {
            if ds.labels[i] != class_id { continue; }
            n += 1;
            for band in 0..32 {
                let mut s = 0.0f64;
                for frame in 0..32 {
                    s += ds.patches[i][band * 32 + frame] as f64;
                }
                profile[band] += s / 32.0;
            }
        }
        let prof: Vec<f32> = profile.iter().map(|v| (*v / n as f64) as f32).collect();
        let compact: Vec<String> = prof.iter().map(|v| format!("{v:+.1}")).collect();
        println!("class {class_id} band profile: {}", compact.join(" "));
    }
    // teacher with generous epochs, prints its own confusion
    let tx: Vec<Vec<f32>> = train_idx.iter().map(|&i| ds.patches[i].clone()).collect();
    let ty: Vec<usize> = train_idx.iter().map(|&i| ds.labels[i]).collect();
    let vx: Vec<Vec<f32>> = val_idx.iter().map(|&i| ds.patches[i].clone()).collect();
    let vy: Vec<usize> = val_idx.iter().map(|&i| ds.labels[i]).collect();
    for epochs in [10usize, 30, 60] {
        let cfg = ClassifierConfig { epochs, batch: 64, lr: 1e-3 };
        match train_teacher(&tx, &ty, &vx, &vy, &cfg, 17) {
            Ok((teacher, acc)) => {
                println!("teacher {epochs} epochs: val acc {acc:.3}");
                let mut conf = vec![vec![0usize; NUM_CLASSES]; NUM_CLASSES];
                for (x, &y) in vx.iter().zip(vy.iter()) {
                    let p = teacher.predict_patch(&timbrelab::dsp::MelPatch { values: x.clone() }).unwrap();
                    conf[y][p.class_id] += 1;
                }
                println!("teacher confusion: {conf:?}");
            }
            Err(e) => println!("teacher {epochs} epochs: {e}"),
        }
    }
}

