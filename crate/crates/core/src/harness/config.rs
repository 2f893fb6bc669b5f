//! Experiment configuration: flat `key = value` text with optional
//! `[section]` headers that prefix the keys below them.
//!
//! ```text
//! task = T01
//! variant = sfdann
//! seeds = 0, 1, 2
//!
//! [noise]
//! domain = target
//! snr_db = -5
//!
//! [train]
//! epochs = 60
//! ```
//!
//! `#` and `;` start comments. Unknown or repeated keys are errors.
//! Relative paths resolve against the directory holding the config file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::signal::{ClassSpec, Layout, SynthConfig};
use crate::smartfilter::Strategy;
use crate::train::{LambdaMode, NoiseDomain, NoisePlan, TrainConfig, Variant};
use crate::wavelet::Wavelet;
use crate::{Error, Result};

/// Source and target operating conditions, e.g. `T01`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskId {
    pub source: String,
    pub target: String,
}

impl TaskId {
    pub fn parse(s: &str) -> Option<Self> {
        let b = s.as_bytes();
        if b.len() == 3 && (b[0] == b'T' || b[0] == b't') && b[1].is_ascii_digit() && b[2].is_ascii_digit() {
            Some(Self {
                source: (b[1] as char).to_string(),
                target: (b[2] as char).to_string(),
            })
        } else {
            None
        }
    }

    pub fn name(&self) -> String {
        format!("T{}{}", self.source, self.target)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic { config: SynthConfig, seed: u64 },
    CwruDir { path: PathBuf, layout: Layout },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskId,
    pub noise: NoisePlan,
    pub data: DataSource,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
}

/// Guidance weight used when `train.mu` is absent: 1 without noise or above
/// 0 dB, 2 down to -2.5 dB, 10 below.
pub fn default_mu(noise: &NoisePlan) -> f64 {
    if noise.domain == NoiseDomain::None || noise.snr_db > 0.0 {
        1.0
    } else if noise.snr_db > -2.5 {
        2.0
    } else {
        10.0
    }
}

struct Entry {
    value: String,
    line: usize,
}

struct Raw {
    entries: BTreeMap<String, Entry>,
}

impl Raw {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let line = line.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {n}: unterminated section header")))?
                    .trim();
                if name.is_empty() || name.contains(char::is_whitespace) {
                    return Err(Error::Config(format!("line {n}: bad section name {name:?}")));
                }
                section = name.to_ascii_lowercase();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {n}: expected `key = value`")))?;
            let k = k.trim().to_ascii_lowercase();
            if k.is_empty() {
                return Err(Error::Config(format!("line {n}: empty key")));
            }
            let key = if section.is_empty() { k } else { format!("{section}.{k}") };
            let entry = Entry {
                value: v.trim().to_string(),
                line: n,
            };
            if let Some(prev) = entries.insert(key.clone(), entry) {
                return Err(Error::Config(format!(
                    "line {n}: field `{key}` already set on line {}",
                    prev.line
                )));
            }
        }
        Ok(Self { entries })
    }

    fn take(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn get<T>(&mut self, key: &str, parse: impl Fn(&str) -> Option<T>, what: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => parse(&e.value).map(Some).ok_or_else(|| {
                Error::Config(format!(
                    "line {}: field `{key}`: expected {what}, got {:?}",
                    e.line, e.value
                ))
            }),
        }
    }

    fn finish(self) -> Result<()> {
        match self.entries.iter().min_by_key(|(_, e)| e.line) {
            None => Ok(()),
            Some((k, e)) => Err(Error::Config(format!("line {}: unknown field `{k}`", e.line))),
        }
    }
}

fn num<T: std::str::FromStr>(s: &str) -> Option<T> {
    s.parse().ok()
}

fn list<T: std::str::FromStr>(s: &str) -> Option<Vec<T>> {
    let v: Option<Vec<T>> = s
        .split([',', ' ', '\t'])
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().ok())
        .collect();
    v.filter(|v| !v.is_empty())
}

/// `repetition:resonance:amplitude` triples separated by commas.
fn classes(s: &str) -> Option<Vec<ClassSpec>> {
    s.split(',')
        .map(|c| {
            let p: Vec<f64> = c.trim().split(':').map(|x| x.trim().parse().ok()).collect::<Option<_>>()?;
            match p[..] {
                [repetition_hz, resonance_hz, amplitude] => Some(ClassSpec {
                    repetition_hz,
                    resonance_hz,
                    amplitude,
                }),
                _ => None,
            }
        })
        .collect()
}

fn lambda_mode(s: &str) -> Option<LambdaMode> {
    match s {
        "per_epoch" | "epoch" => Some(LambdaMode::PerEpoch),
        "per_iteration" | "iteration" => Some(LambdaMode::PerIteration),
        _ => None,
    }
}

fn lambda_mode_name(m: LambdaMode) -> &'static str {
    match m {
        LambdaMode::PerEpoch => "per_epoch",
        LambdaMode::PerIteration => "per_iteration",
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut raw = Raw::parse(text)?;
        let cfg_err = |key: &str, msg: String| Error::Config(format!("field `{key}`: {msg}"));

        let task = raw
            .get("task", TaskId::parse, "a task id like T01")?
            .unwrap_or(TaskId {
                source: "0".into(),
                target: "1".into(),
            });
        let variant = raw
            .get("variant", Variant::parse, "sfdann, sfdann_v, dann_plain or cnn_only")?
            .unwrap_or(Variant::Sfdann);
        let strategy = raw
            .get("strategy", Strategy::parse, "target_to_lwpt, source_to_lwpt, both_lwpt or none")?
            .unwrap_or(variant.default_strategy());
        variant
            .check_strategy(strategy)
            .map_err(|e| cfg_err("strategy", e.to_string()))?;
        let seeds = raw.get("seeds", list::<u64>, "a list of integers")?.unwrap_or(vec![0, 1, 2, 3, 4]);

        let domain = raw
            .get("noise.domain", NoiseDomain::parse, "none, source, target or both")?
            .unwrap_or(NoiseDomain::None);
        let snr = raw.get("noise.snr_db", num::<f64>, "a number")?;
        let noise = match (domain, snr) {
            (NoiseDomain::None, _) => NoisePlan::NONE,
            (_, None) => return Err(cfg_err("noise.snr_db", "required when noise.domain is set".into())),
            (_, Some(s)) if !s.is_finite() => return Err(cfg_err("noise.snr_db", "must be finite".into())),
            (d, Some(s)) => NoisePlan { domain: d, snr_db: s },
        };

        let layers = raw.get("filter.layers", num::<usize>, "a positive integer")?.unwrap_or(5);
        let wavelet = raw.get("filter.wavelet", Wavelet::parse, "db4 or haar")?.unwrap_or(Wavelet::Db4);

        let kind = raw.take("data.kind");
        let path = raw.take("data.path");
        let window = raw.get("data.window", num::<usize>, "a power of two")?;
        let data_seed = raw.get("data.seed", num::<u64>, "an integer")?;
        let rate = raw.get("data.sample_rate", num::<f64>, "a number")?;
        let data = match kind.as_ref().map(|e| e.value.as_str()).unwrap_or("synthetic") {
            "synthetic" => {
                let mut sc = SynthConfig::default();
                if let Some(w) = window {
                    sc.window_len = w;
                }
                if let Some(r) = rate {
                    sc.sample_rate = r;
                }
                if let Some(v) = raw.get("synth.samples_per_class", num::<usize>, "a positive integer")? {
                    sc.samples_per_class = v;
                }
                if let Some(v) = raw.get("synth.classes", classes, "rep:res:amp triples")? {
                    sc.fault_classes = v;
                }
                if let Some(v) = raw.get("synth.rate_scales", list::<f64>, "a list of numbers")? {
                    sc.rate_scales = v;
                }
                if let Some(v) = raw.get("synth.background", num::<f64>, "a number")? {
                    sc.background_level = v;
                }
                if let Some(v) = raw.get("synth.damping", num::<f64>, "a number")? {
                    sc.damping = v;
                }
                if let Some(v) = raw.get("synth.jitter", num::<f64>, "a number")? {
                    sc.jitter = v;
                }
                sc.validate().map_err(|e| cfg_err("synth", e.to_string()))?;
                if let Some(p) = path {
                    return Err(Error::Config(format!(
                        "line {}: field `data.path` is only valid with data.kind = cwru-dir",
                        p.line
                    )));
                }
                DataSource::Synthetic {
                    config: sc,
                    seed: data_seed.unwrap_or(0),
                }
            }
            "cwru-dir" | "cwru" => {
                let p = path.ok_or_else(|| cfg_err("data.path", "required for data.kind = cwru-dir".into()))?;
                let mut layout = Layout::default();
                if let Some(w) = window {
                    layout.window_len = w;
                }
                if let Some(r) = rate {
                    layout.default_sample_rate = r;
                }
                DataSource::CwruDir {
                    path: base.join(p.value),
                    layout,
                }
            }
            other => {
                let line = kind.as_ref().map_or(0, |e| e.line);
                return Err(Error::Config(format!(
                    "line {line}: field `data.kind`: expected synthetic or cwru-dir, got {other:?}"
                )));
            }
        };

        let d = TrainConfig::default();
        let train = TrainConfig {
            variant,
            strategy,
            wavelet,
            layers,
            batch: raw.get("train.batch", num::<usize>, "a positive integer")?.unwrap_or(d.batch),
            epochs: raw.get("train.epochs", num::<usize>, "a positive integer")?.unwrap_or(d.epochs),
            lr: raw.get("train.lr", num::<f64>, "a number")?.unwrap_or(d.lr),
            mu: raw.get("train.mu", num::<f64>, "a number")?.unwrap_or(default_mu(&noise)),
            seeds,
            train_fraction: raw
                .get("train.train_fraction", num::<f64>, "a number in (0, 1)")?
                .unwrap_or(d.train_fraction),
            lambda_mode: raw
                .get("train.lambda_mode", lambda_mode, "per_epoch or per_iteration")?
                .unwrap_or(d.lambda_mode),
        };
        train.validate().map_err(|e| cfg_err("train", e.to_string()))?;
        let out_dir = base.join(raw.take("out.dir").map_or("out".to_string(), |e| e.value));
        raw.finish()?;
        Ok(Self {
            task,
            noise,
            data,
            train,
            out_dir,
        })
    }

    /// Every effective setting as sorted `key = value` lines (output paths excluded).
    pub fn canonical(&self) -> String {
        let t = &self.train;
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        m.insert("task", self.task.name());
        m.insert("variant", t.variant.name().into());
        m.insert("strategy", t.strategy.name().into());
        m.insert("seeds", t.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
        m.insert("noise.domain", self.noise.domain.name().into());
        m.insert("noise.snr_db", format!("{}", self.noise.snr_db));
        m.insert("filter.layers", t.layers.to_string());
        m.insert("filter.wavelet", t.wavelet.name().into());
        m.insert("train.batch", t.batch.to_string());
        m.insert("train.epochs", t.epochs.to_string());
        m.insert("train.lr", format!("{}", t.lr));
        m.insert("train.mu", format!("{}", t.mu));
        m.insert("train.train_fraction", format!("{}", t.train_fraction));
        m.insert("train.lambda_mode", lambda_mode_name(t.lambda_mode).into());
        match &self.data {
            DataSource::Synthetic { config, seed } => {
                m.insert("data.kind", "synthetic".into());
                m.insert("data.seed", seed.to_string());
                m.insert("data.window", config.window_len.to_string());
                m.insert("data.sample_rate", format!("{}", config.sample_rate));
                m.insert("synth.samples_per_class", config.samples_per_class.to_string());
                m.insert(
                    "synth.classes",
                    config
                        .fault_classes
                        .iter()
                        .map(|c| format!("{}:{}:{}", c.repetition_hz, c.resonance_hz, c.amplitude))
                        .collect::<Vec<_>>()
                        .join(","),
                );
                m.insert(
                    "synth.rate_scales",
                    config.rate_scales.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(","),
                );
                m.insert("synth.background", format!("{}", config.background_level));
                m.insert("synth.damping", format!("{}", config.damping));
                m.insert("synth.jitter", format!("{}", config.jitter));
            }
            DataSource::CwruDir { path, layout } => {
                m.insert("data.kind", "cwru-dir".into());
                m.insert("data.path", path.display().to_string());
                m.insert("data.window", layout.window_len.to_string());
                m.insert("data.sample_rate", format!("{}", layout.default_sample_rate));
            }
        }
        let mut out = String::new();
        for (k, v) in m {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Hex SHA-256 of [`canonical`](Self::canonical).
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
