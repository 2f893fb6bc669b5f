//! Experiment front end: configuration, task selection, result files,
//! ablations and diagnostic exports.
//!
//! Every file written here is a deterministic function of the config and
//! seed list.

mod config;
pub mod spectra;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub use config::{default_mu, DataSource, ExperimentConfig, TaskId};

use crate::optim::{Checkpoint, GradCheckReport, Group};
use crate::signal::{
    class_token, load_dataset, synth_corpus, synth_recordings, write_recording_binary, Corpus,
    Dataset, Domain, SynthConfig,
};
use crate::smartfilter::{FilterRouting, Strategy};
use crate::train::{
    apply_noise, run_seeds, tiny_gradcheck, EpochLog, Model, RunResult, SeedOutcome, TrainConfig,
    Variant, GRADCHECK_TOL,
};
use crate::adversarial::DannParams;
use crate::wavelet::Wavelet;
use crate::{Error, Result};

use spectra::{amplitude_db, format_db, mean_spectrum, third_octave, OctaveBand};

/// `xx.x%±x.x%`.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{:.1}%±{:.1}%", 100.0 * mean, 100.0 * std)
}

pub fn load_corpus(data: &DataSource) -> Result<Corpus> {
    match data {
        DataSource::Synthetic { config, seed } => synth_corpus(config, *seed),
        DataSource::CwruDir { path, layout } => load_dataset(path, layout),
    }
}

/// Source and target condition datasets named by the task.
pub fn task_data(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<(Dataset, Dataset)> {
    let get = |name: &str| {
        corpus.conditions.get(name).cloned().ok_or_else(|| {
            Error::Config(format!(
                "field `task`: {} needs condition {name:?}, data has {:?}",
                cfg.task.name(),
                corpus.conditions.keys().collect::<Vec<_>>()
            ))
        })
    };
    Ok((get(&cfg.task.source)?, get(&cfg.task.target)?))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn loss_csv(history: &[EpochLog]) -> String {
    let mut s = String::from("epoch,L_C,L_D,L_G,lambda,lr\n");
    for h in history {
        let _ = writeln!(s, "{},{},{},{},{},{}", h.epoch, h.l_c, h.l_d, h.l_g, h.lambda, h.lr);
    }
    s
}

fn checkpoint_for(cfg: &ExperimentConfig, train: &TrainConfig, o: &SeedOutcome) -> Checkpoint {
    let mut meta = BTreeMap::new();
    meta.insert("config_hash".to_string(), cfg.hash());
    meta.insert("task".to_string(), cfg.task.name());
    meta.insert("variant".to_string(), train.variant.name().to_string());
    meta.insert("strategy".to_string(), train.strategy.name().to_string());
    meta.insert("wavelet".to_string(), train.wavelet.name().to_string());
    meta.insert("layers".to_string(), train.layers.to_string());
    meta.insert("num_classes".to_string(), o.model.num_classes().to_string());
    meta.insert("epoch".to_string(), train.epochs.to_string());
    meta.insert("seed".to_string(), o.seed.to_string());
    meta.insert("split_hash".to_string(), o.split_hash.clone());
    Checkpoint::from_params(&o.model, meta)
}

/// Rebuilds the network described by a checkpoint's metadata and loads its tensors.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<Model> {
    let field = |k: &str| {
        ckpt.meta(k)
            .ok_or_else(|| Error::Config(format!("checkpoint metadata lacks `{k}`")))
    };
    let bad = |k: &str, v: &str| Error::Config(format!("checkpoint metadata `{k}` = {v:?} is invalid"));
    let variant = field("variant").and_then(|v| Variant::parse(v).ok_or_else(|| bad("variant", v)))?;
    let strategy = field("strategy").and_then(|v| Strategy::parse(v).ok_or_else(|| bad("strategy", v)))?;
    let wavelet = field("wavelet").and_then(|v| Wavelet::parse(v).ok_or_else(|| bad("wavelet", v)))?;
    let layers: usize = field("layers").and_then(|v| v.parse().map_err(|_| bad("layers", v)))?;
    let classes: usize = field("num_classes").and_then(|v| v.parse().map_err(|_| bad("num_classes", v)))?;
    variant.check_strategy(strategy)?;
    let mut model = Model {
        variant,
        filter: FilterRouting::new(strategy, wavelet, layers),
        dann: DannParams::zeros(classes),
    };
    ckpt.restore_into(&mut model)?;
    Ok(model)
}

/// Seed recorded in a checkpoint (selects the noise draws for exports).
pub fn checkpoint_seed(ckpt: &Checkpoint) -> Result<u64> {
    ckpt.meta("seed")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Config("checkpoint metadata lacks a numeric `seed`".into()))
}

#[derive(Debug)]
pub struct RunReport {
    pub result: RunResult,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

fn run_label(t: &TrainConfig) -> String {
    format!("{}_{}", t.variant.name(), t.strategy.name())
}

fn write_seed_files(
    cfg: &ExperimentConfig,
    train: &TrainConfig,
    result: &RunResult,
    prefix: &str,
    files: &mut Vec<PathBuf>,
) -> Result<()> {
    for o in &result.outcomes {
        let loss = cfg.out_dir.join(format!("loss_{prefix}seed{}.csv", o.seed));
        write(&loss, loss_csv(&o.history))?;
        let ck = cfg.out_dir.join(format!("checkpoint_{prefix}seed{}.sfdc", o.seed));
        checkpoint_for(cfg, train, o).write(&ck)?;
        files.push(loss);
        files.push(ck);
    }
    Ok(())
}

fn describe(cfg: &ExperimentConfig) -> String {
    let noise = match cfg.noise.domain {
        crate::train::NoiseDomain::None => "none".to_string(),
        d => format!("{} at {} dB", d.name(), cfg.noise.snr_db),
    };
    format!("task {} | noise {noise} | config {}", cfg.task.name(), &cfg.hash()[..16])
}

/// Trains the configured variant over every seed and writes
/// `results.csv`, `loss_seed<k>.csv`, `checkpoint_seed<k>.sfdc` and `summary.txt`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let corpus = load_corpus(&cfg.data)?;
    let (source, target) = task_data(cfg, &corpus)?;
    let result = run_seeds(&cfg.train, &source, &target, &cfg.noise)?;

    let mut files = Vec::new();
    let mut csv = String::from("task,variant,strategy,seed,accuracy\n");
    for o in &result.outcomes {
        let _ = writeln!(
            csv,
            "{},{},{},{},{:.6}",
            cfg.task.name(),
            cfg.train.variant.name(),
            cfg.train.strategy.name(),
            o.seed,
            o.accuracy
        );
    }
    let results = cfg.out_dir.join("results.csv");
    write(&results, &csv)?;
    files.push(results);
    write_seed_files(cfg, &cfg.train, &result, "", &mut files)?;

    let mut summary = format!("{}\n{}\n", describe(cfg), run_label(&cfg.train));
    for o in &result.outcomes {
        let _ = writeln!(
            summary,
            "  seed {}: target {:.1}%  source {:.1}%",
            o.seed,
            100.0 * o.accuracy,
            100.0 * o.source_accuracy
        );
    }
    let _ = writeln!(summary, "target accuracy {}", format_mean_std(result.mean, result.std));
    let path = cfg.out_dir.join("summary.txt");
    write(&path, &summary)?;
    files.push(path);
    Ok(RunReport {
        result,
        summary,
        files,
    })
}

/// The five comparison arms of an ablation.
pub const ABLATION_ARMS: [(Variant, Strategy); 5] = [
    (Variant::Sfdann, Strategy::TargetToLwpt),
    (Variant::Sfdann, Strategy::SourceToLwpt),
    (Variant::SfdannV, Strategy::BothLwpt),
    (Variant::DannPlain, Strategy::None),
    (Variant::CnnOnly, Strategy::None),
];

#[derive(Debug)]
pub struct AblationReport {
    pub arms: Vec<(Variant, Strategy, RunResult)>,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

impl AblationReport {
    pub fn mean(&self, variant: Variant, strategy: Strategy) -> Option<f64> {
        self.arms
            .iter()
            .find(|(v, s, _)| *v == variant && *s == strategy)
            .map(|(_, _, r)| r.mean)
    }
}

/// Runs [`ABLATION_ARMS`] on identical data and seeds; writes
/// `ablation.csv` (per-seed rows, then mean and std rows per arm),
/// `ablation_summary.txt`, and per-arm loss files and checkpoints.
pub fn ablate(cfg: &ExperimentConfig) -> Result<AblationReport> {
    ablate_arms(cfg, &ABLATION_ARMS)
}

/// [`ablate`] over a chosen subset of arms.
pub fn ablate_arms(cfg: &ExperimentConfig, arms: &[(Variant, Strategy)]) -> Result<AblationReport> {
    let corpus = load_corpus(&cfg.data)?;
    let (source, target) = task_data(cfg, &corpus)?;
    let mut files = Vec::new();
    let mut csv = String::from("task,variant,strategy,seed,accuracy,split_hash\n");
    let mut summary = format!("{}\n", describe(cfg));
    let mut out = Vec::new();
    for &(variant, strategy) in arms {
        let train = cfg.train.with_variant(variant, Some(strategy));
        let result = run_seeds(&train, &source, &target, &cfg.noise)?;
        let (task, v, s) = (cfg.task.name(), variant.name(), strategy.name());
        for o in &result.outcomes {
            let _ = writeln!(csv, "{task},{v},{s},{},{:.6},{}", o.seed, o.accuracy, o.split_hash);
        }
        let _ = writeln!(csv, "{task},{v},{s},mean,{:.6},", result.mean);
        let _ = writeln!(csv, "{task},{v},{s},std,{:.6},", result.std);
        let _ = writeln!(summary, "{:<28} {}", run_label(&train), format_mean_std(result.mean, result.std));
        write_seed_files(cfg, &train, &result, &format!("{}_", run_label(&train)), &mut files)?;
        out.push((variant, strategy, result));
    }
    let path = cfg.out_dir.join("ablation.csv");
    write(&path, &csv)?;
    files.push(path);
    let path = cfg.out_dir.join("ablation_summary.txt");
    write(&path, &summary)?;
    files.push(path);
    Ok(AblationReport {
        arms: out,
        summary,
        files,
    })
}

/// Mean spectra and octave levels of one class, per domain, before and after the filter.
#[derive(Debug, Clone)]
pub struct SpectraReport {
    pub class: usize,
    pub sample_rate: f64,
    /// `(domain, stage, mean magnitude spectrum, octave bands)`; stage is
    /// `original` or `reconstructed`.
    pub entries: Vec<(Domain, &'static str, Vec<f64>, Vec<OctaveBand>)>,
}

impl SpectraReport {
    pub fn spectrum(&self, domain: Domain, stage: &str) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|(d, s, _, _)| *d == domain && *s == stage)
            .map(|(_, _, m, _)| m.as_slice())
    }

    /// `domain,stage,bin,freq_hz,magnitude,magnitude_db`.
    pub fn spectrum_csv(&self) -> String {
        let mut s = String::from("domain,stage,bin,freq_hz,magnitude,magnitude_db\n");
        for (d, stage, m, _) in &self.entries {
            let df = self.sample_rate / (2 * (m.len() - 1)) as f64;
            for (k, v) in m.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{stage},{k},{:.6},{v:.12e},{}",
                    d.as_str(),
                    k as f64 * df,
                    format_db(amplitude_db(*v))
                );
            }
        }
        s
    }

    /// `domain,stage,band,center_hz,lower_hz,upper_hz,level_db`.
    pub fn octave_csv(&self) -> String {
        let mut s = String::from("domain,stage,band,center_hz,lower_hz,upper_hz,level_db\n");
        for (d, stage, _, bands) in &self.entries {
            for b in bands {
                let _ = writeln!(
                    s,
                    "{},{stage},{},{:.6},{:.6},{:.6},{}",
                    d.as_str(),
                    b.index,
                    b.center,
                    b.lower,
                    b.upper,
                    format_db(b.level_db)
                );
            }
        }
        s
    }
}

/// Spectra of class `class` in both domains, original and after each
/// domain's filter path.
pub fn export_spectra(
    model: &Model,
    source: &Dataset,
    target: &Dataset,
    class: usize,
    sample_rate: f64,
) -> Result<SpectraReport> {
    let mut entries = Vec::new();
    for (domain, ds) in [(Domain::Source, source), (Domain::Target, target)] {
        let windows: Vec<Vec<f64>> = ds
            .samples
            .iter()
            .filter(|s| s.label == Some(class))
            .map(|s| s.window.clone())
            .collect();
        if windows.is_empty() {
            return Err(Error::Shape(format!(
                "no {} windows of class {class}",
                domain.as_str()
            )));
        }
        let rec = model.filtered(&windows, domain)?;
        for (stage, w) in [("original", &windows), ("reconstructed", &rec)] {
            let m = mean_spectrum(w)?;
            let bands = third_octave(&m, sample_rate)?;
            entries.push((domain, stage, m, bands));
        }
    }
    Ok(SpectraReport {
        class,
        sample_rate,
        entries,
    })
}

/// One row per sample: `index,domain,true_label,predicted_label,f0..f63`.
pub fn export_features(model: &Model, datasets: &[&Dataset]) -> Result<String> {
    let mut s = String::from("index,domain,true_label,predicted_label");
    for i in 0..crate::adversarial::FEATURE_DIM {
        let _ = write!(s, ",f{i}");
    }
    s.push('\n');
    let mut index = 0;
    for ds in datasets {
        for sample in &ds.samples {
            let w = std::slice::from_ref(&sample.window);
            let f = &model.features(w, sample.domain)?[0];
            let pred = model.predict(w, sample.domain)?[0];
            let label = sample.label.map_or(String::new(), |l| l.to_string());
            let _ = write!(s, "{index},{},{label},{pred}", sample.domain.as_str());
            for v in f {
                let _ = write!(s, ",{v:.12e}");
            }
            s.push('\n');
            index += 1;
        }
    }
    Ok(s)
}

/// Whole (unsplit) source and target sets of a config, with the noise
/// draws of `seed`, as seen by a checkpoint trained on that seed.
pub fn experiment_data(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset, f64)> {
    let corpus = load_corpus(&cfg.data)?;
    let (s, t) = task_data(cfg, &corpus)?;
    let (s, t) = apply_noise(&s, &t, &cfg.noise, seed)?;
    Ok((s, t, corpus.sample_rate))
}

/// Runs the tiny finite-difference check; returns the printable report and
/// whether every group is within tolerance.
pub fn gradcheck(fault: Option<Group>) -> Result<(String, bool, GradCheckReport)> {
    let rep = tiny_gradcheck(0, fault)?;
    let mut text = String::new();
    let mut ok = true;
    for g in Group::ALL {
        let e = rep.per_group.get(&g).copied().unwrap_or(f64::NAN);
        let pass = e < GRADCHECK_TOL;
        ok &= pass;
        let _ = writeln!(
            text,
            "{:<8} max_rel_error {:.3e}  {}",
            g.name(),
            e,
            if pass { "ok" } else { "FAIL" }
        );
    }
    let _ = writeln!(text, "checked {} scalars, tolerance {:.0e}", rep.checked, GRADCHECK_TOL);
    Ok((text, ok, rep))
}

/// Writes every synthetic condition as `<out>/<condition>/<class token>.sfd`,
/// the layout [`load_dataset`] reads back into the same corpus.
pub fn write_synthetic(config: &SynthConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for (cond, recs) in synth_recordings(config, seed)? {
        let dir = out.join(&cond);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (class, rec) in recs.iter().enumerate() {
            let path = dir.join(format!("{}.sfd", class_token(class)?));
            write_recording_binary(&path, rec)?;
            files.push(path);
        }
    }
    Ok(files)
}
