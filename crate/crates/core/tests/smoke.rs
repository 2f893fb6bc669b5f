use std::fs;
use std::time::{Duration, Instant};

use sfdann::harness::{self, ExperimentConfig};
use sfdann::optim::Checkpoint;
use sfdann::signal::Domain;
use sfdann::smartfilter::Strategy;
use sfdann::train::Variant;
use sfdann::wavelet::wpt_decode;

const SMOKE: &str = "\
task = T01
variant = sfdann
seeds = 0, 1

[noise]
domain = target
snr_db = 0

[filter]
layers = 3

[data]
kind = synthetic
window = 512

[synth]
samples_per_class = 60

[train]
batch = 32
epochs = 30
";

#[test]
fn synthetic_smoke_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(SMOKE, dir.path()).unwrap();
    let start = Instant::now();
    let report = harness::run(&cfg).unwrap();
    assert!(start.elapsed() < Duration::from_secs(300), "took {:?}", start.elapsed());

    let out = &cfg.out_dir;
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    let lines: Vec<&str> = results.lines().collect();
    assert_eq!(lines[0], "task,variant,strategy,seed,accuracy");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("T01,sfdann,target_to_lwpt,0,"));

    for seed in [0, 1] {
        let loss = fs::read_to_string(out.join(format!("loss_seed{seed}.csv"))).unwrap();
        assert!(loss.starts_with("epoch,L_C,L_D,L_G,lambda,lr\n"));
        assert_eq!(loss.lines().count(), 31);
        let ckpt = Checkpoint::read(&out.join(format!("checkpoint_seed{seed}.sfdc"))).unwrap();
        assert_eq!(ckpt.meta("seed"), Some(seed.to_string().as_str()));
        assert_eq!(ckpt.meta("config_hash"), Some(cfg.hash().as_str()));
    }
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert_eq!(summary, report.summary);
    assert!(summary.contains('%') && summary.contains('±'));

    // Same config, same bytes.
    let again = tempfile::tempdir().unwrap();
    let cfg2 = ExperimentConfig::parse(SMOKE, again.path()).unwrap();
    harness::run(&cfg2).unwrap();
    assert_eq!(
        fs::read(cfg2.out_dir.join("results.csv")).unwrap(),
        results.as_bytes()
    );
}

#[test]
fn exports_from_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMOKE
        .replace("seeds = 0, 1", "seeds = 3")
        .replace("epochs = 30", "epochs = 2")
        .replace("samples_per_class = 60", "samples_per_class = 16");
    let cfg = ExperimentConfig::parse(&text, dir.path()).unwrap();
    harness::run(&cfg).unwrap();
    let ckpt = Checkpoint::read(&cfg.out_dir.join("checkpoint_seed3.sfdc")).unwrap();
    let model = harness::model_from_checkpoint(&ckpt).unwrap();
    assert_eq!(model.variant, Variant::Sfdann);
    assert_eq!(model.filter.strategy, Strategy::TargetToLwpt);
    let seed = harness::checkpoint_seed(&ckpt).unwrap();
    let (source, target, fs) = harness::experiment_data(&cfg, seed).unwrap();

    let features = harness::export_features(&model, &[&source, &target]).unwrap();
    let rows: Vec<&str> = features.lines().collect();
    assert_eq!(rows.len(), 1 + source.len() + target.len());
    assert!(rows.iter().all(|r| r.split(',').count() == 68));
    assert_eq!(features, harness::export_features(&model, &[&source, &target]).unwrap());

    let report = harness::export_spectra(&model, &source, &target, 1, fs).unwrap();
    assert_eq!(report.entries.len(), 4);
    for (_, _, m, bands) in &report.entries {
        assert_eq!(m.len(), 512 / 2 + 1);
        assert!(!bands.is_empty());
    }
    // The source runs through the frozen transform, which reconstructs exactly.
    let a = report.spectrum(Domain::Source, "original").unwrap();
    let b = report.spectrum(Domain::Source, "reconstructed").unwrap();
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < 1e-9);
    }
    assert!(report.spectrum_csv().starts_with("domain,stage,bin,freq_hz,magnitude,magnitude_db\n"));
    assert!(report.octave_csv().lines().count() > 1);
    assert!(harness::export_spectra(&model, &source, &target, 9, fs).is_err());

    // Frozen decode is what the source path applies.
    let w = &source.samples[0].window;
    let grid = sfdann::wavelet::wpt_encode(w, &model.filter.wpt).unwrap();
    let rec = wpt_decode(&grid, &model.filter.wpt).unwrap();
    assert!(w.iter().zip(&rec).all(|(x, y)| (x - y).abs() < 1e-9));
}

#[test]
fn ablation_shares_splits_across_arms() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMOKE
        .replace("epochs = 30", "epochs = 1")
        .replace("samples_per_class = 60", "samples_per_class = 12");
    let cfg = ExperimentConfig::parse(&text, dir.path()).unwrap();
    let report = harness::ablate(&cfg).unwrap();
    assert_eq!(report.arms.len(), 5);
    let csv = fs::read_to_string(cfg.out_dir.join("ablation.csv")).unwrap();
    let mut groups = std::collections::BTreeSet::new();
    let mut hashes = std::collections::BTreeMap::new();
    for row in csv.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        groups.insert((f[1].to_string(), f[2].to_string()));
        if f[3] != "mean" && f[3] != "std" {
            let h = hashes.entry(f[3].to_string()).or_insert_with(|| f[5].to_string());
            assert_eq!(h, f[5], "split hash differs for seed {}", f[3]);
        }
    }
    assert_eq!(groups.len(), 5);
    assert_eq!(hashes.len(), 2);
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "cfg") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(cfg.out_dir.starts_with(&dir));
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
