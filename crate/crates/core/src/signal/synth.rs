//! Synthetic bearing-like recordings.
//!
//! Class 0 is broadband background only. Every other class adds a train of
//! exponentially decaying resonance bursts: bursts repeat at the class
//! repetition frequency (scaled by the operating condition, emulating shaft
//! speed) and ring at the class resonance frequency. Each burst gets a random
//! phase and a small timing jitter, so the line structure of a strictly
//! periodic train does not dominate the spectrum.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{segment, zscore_normalize, Corpus, Dataset, Domain, TimeSeries};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassSpec {
    /// Burst repetition frequency at rate scale 1, Hz.
    pub repetition_hz: f64,
    /// Ringing frequency of each burst, Hz.
    pub resonance_hz: f64,
    /// Peak burst amplitude relative to a unit background.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub sample_rate: f64,
    pub window_len: usize,
    pub samples_per_class: usize,
    /// Fault classes 1..C; class 0 (background only) is implicit.
    pub fault_classes: Vec<ClassSpec>,
    /// One entry per operating condition; multiplies every repetition rate.
    pub rate_scales: Vec<f64>,
    /// Standard deviation of the white background.
    pub background_level: f64,
    /// Burst envelope decay rate, 1/s.
    pub damping: f64,
    /// Relative standard deviation of the inter-burst period.
    pub jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate: 12_000.0,
            window_len: 512,
            samples_per_class: 60,
            fault_classes: vec![
                ClassSpec {
                    repetition_hz: 110.0,
                    resonance_hz: 1500.0,
                    amplitude: 1.0,
                },
                ClassSpec {
                    repetition_hz: 150.0,
                    resonance_hz: 2250.0,
                    amplitude: 1.0,
                },
                ClassSpec {
                    repetition_hz: 80.0,
                    resonance_hz: 3000.0,
                    amplitude: 1.0,
                },
            ],
            rate_scales: vec![1.0, 0.8],
            background_level: 0.15,
            damping: 600.0,
            jitter: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn num_classes(&self) -> usize {
        self.fault_classes.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate / 2.0;
        if !(self.sample_rate > 0.0) {
            return Err(Error::Config("synth.sample_rate must be positive".into()));
        }
        if !self.window_len.is_power_of_two() {
            return Err(Error::Config("synth window length must be a power of two".into()));
        }
        for (i, c) in self.fault_classes.iter().enumerate() {
            if !(c.repetition_hz > 0.0) || !(c.resonance_hz > 0.0) {
                return Err(Error::Config(format!(
                    "class {}: frequencies must be positive",
                    i + 1
                )));
            }
            if c.resonance_hz >= nyquist {
                return Err(Error::Config(format!(
                    "class {}: resonance {} Hz at or above Nyquist {nyquist} Hz",
                    i + 1,
                    c.resonance_hz
                )));
            }
            if !(c.amplitude >= 0.0) {
                return Err(Error::Config(format!("class {}: negative amplitude", i + 1)));
            }
        }
        if self.rate_scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("rate scales must be positive".into()));
        }
        if !(self.damping > 0.0) {
            return Err(Error::Config("damping must be positive".into()));
        }
        if !(self.background_level > 0.0) {
            return Err(Error::Config("background level must be positive".into()));
        }
        if !(self.jitter >= 0.0 && self.jitter < 0.5) {
            return Err(Error::Config("jitter must lie in [0, 0.5)".into()));
        }
        Ok(())
    }
}

/// One raw (unnormalized) recording long enough for `samples_per_class` windows.
pub fn synth_recording<R: Rng + ?Sized>(
    config: &SynthConfig,
    class: usize,
    rate_scale: f64,
    rng: &mut R,
) -> Result<TimeSeries> {
    config.validate()?;
    if class >= config.num_classes() {
        return Err(Error::Label(format!("synthetic class {class} not configured")));
    }
    let n = config.samples_per_class * config.window_len;
    let fs = config.sample_rate;
    let mut x: Vec<f64> = (0..n)
        .map(|_| config.background_level * rng.sample::<f64, _>(StandardNormal))
        .collect();

    if class > 0 {
        let spec = config.fault_classes[class - 1];
        let period = fs / (spec.repetition_hz * rate_scale);
        let ring = ((8.0 / config.damping) * fs).ceil() as usize;
        let omega = 2.0 * PI * spec.resonance_hz / fs;
        let decay = config.damping / fs;
        let mut t = rng.random::<f64>() * period;
        while (t as usize) < n {
            let start = t.ceil() as usize;
            let phase = rng.random::<f64>() * 2.0 * PI;
            let amp = spec.amplitude * (1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal));
            for i in start..(start + ring).min(n) {
                let tau = i as f64 - t;
                x[i] += amp * (-decay * tau).exp() * (omega * tau + phase).sin();
            }
            let step = 1.0 + config.jitter * rng.sample::<f64, _>(StandardNormal);
            t += period * step.max(0.5);
        }
    }
    TimeSeries::new(x, fs)
}

/// Balanced dataset for one operating condition: each class recording is
/// normalized, then segmented.
pub fn synth_dataset<R: Rng + ?Sized>(
    config: &SynthConfig,
    rate_scale: f64,
    rng: &mut R,
) -> Result<Dataset> {
    let recordings = condition_recordings(config, rate_scale, rng)?;
    dataset_from_recordings(config, &recordings)
}

fn condition_recordings<R: Rng + ?Sized>(
    config: &SynthConfig,
    rate_scale: f64,
    rng: &mut R,
) -> Result<Vec<TimeSeries>> {
    config.validate()?;
    if !(rate_scale > 0.0) {
        return Err(Error::Config("rate scale must be positive".into()));
    }
    (0..config.num_classes())
        .map(|class| synth_recording(config, class, rate_scale, rng))
        .collect()
}

fn dataset_from_recordings(config: &SynthConfig, recordings: &[TimeSeries]) -> Result<Dataset> {
    let mut samples = Vec::with_capacity(config.num_classes() * config.samples_per_class);
    for (class, rec) in recordings.iter().enumerate() {
        let rec = zscore_normalize(rec)?;
        samples.extend(segment(&rec, config.window_len, Some(class), Domain::Source)?);
    }
    Dataset::new(samples, config.num_classes())
}

/// Raw per-class recordings of every operating condition, keyed `"0"`,
/// `"1"`, ...; entry `c` of each list is class `c`.
pub fn synth_recordings(config: &SynthConfig, seed: u64) -> Result<BTreeMap<String, Vec<TimeSeries>>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for (i, &scale) in config.rate_scales.iter().enumerate() {
        out.insert(i.to_string(), condition_recordings(config, scale, &mut rng)?);
    }
    Ok(out)
}

/// All configured operating conditions, named `"0"`, `"1"`, ...
pub fn synth_corpus(config: &SynthConfig, seed: u64) -> Result<Corpus> {
    let mut conditions = BTreeMap::new();
    for (name, recs) in synth_recordings(config, seed)? {
        conditions.insert(name, dataset_from_recordings(config, &recs)?);
    }
    Ok(Corpus {
        conditions,
        sample_rate: config.sample_rate,
    })
}
