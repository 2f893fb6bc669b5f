//! Recordings, fixed-length windows and the preprocessing applied to them.
//!
//! A [`TimeSeries`] is z-score normalized per recording and then cut into
//! non-overlapping windows ([`Sample`]). Gaussian noise is injected per
//! window and rescaled after generation so that the realized SNR is exact.

mod io;
mod synth;

pub use io::{
    class_label, class_token, load_dataset, load_recording, write_recording_binary,
    write_recording_text, Corpus, Layout, CWRU_CLASS_TOKENS,
};
pub use synth::{
    synth_corpus, synth_dataset, synth_recording, synth_recordings, ClassSpec, SynthConfig,
};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// A raw recording.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub values: Vec<f64>,
    /// Hz.
    pub sample_rate: f64,
    /// Content ceiling in Hz; `sample_rate / 2` unless the data was band-passed.
    pub band_limit: f64,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>, sample_rate: f64) -> Result<Self> {
        Self::with_band_limit(values, sample_rate, sample_rate / 2.0)
    }

    pub fn with_band_limit(values: Vec<f64>, sample_rate: f64, band_limit: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::Range(format!("sample rate must be positive, got {sample_rate}")));
        }
        if !(band_limit > 0.0 && band_limit <= sample_rate / 2.0) {
            return Err(Error::Range(format!(
                "band limit {band_limit} outside (0, {}]",
                sample_rate / 2.0
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i} of recording")));
        }
        Ok(Self {
            values,
            sample_rate,
            band_limit,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// One window of length `W` (a power of two).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub window: Vec<f64>,
    pub label: Option<usize>,
    pub domain: Domain,
}

impl Sample {
    pub fn new(window: Vec<f64>, label: Option<usize>, domain: Domain) -> Self {
        Self {
            window,
            label,
            domain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize) -> Result<Self> {
        let ds = Self {
            samples,
            num_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(first) = self.samples.first() {
            let w = first.window.len();
            if let Some(bad) = self.samples.iter().find(|s| s.window.len() != w) {
                return Err(Error::Shape(format!(
                    "mixed window lengths {w} and {}",
                    bad.window.len()
                )));
            }
        }
        for s in &self.samples {
            if let Some(l) = s.label {
                if l >= self.num_classes {
                    return Err(Error::Label(format!(
                        "label {l} outside [0, {})",
                        self.num_classes
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn window_len(&self) -> Option<usize> {
        self.samples.first().map(|s| s.window.len())
    }

    pub fn count(&self, domain: Domain) -> usize {
        self.samples.iter().filter(|s| s.domain == domain).count()
    }

    /// Number of labelled samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for l in self.samples.iter().filter_map(|s| s.label) {
            counts[l] += 1;
        }
        counts
    }

    /// Re-tags every sample with `domain`.
    pub fn with_domain(mut self, domain: Domain) -> Self {
        for s in &mut self.samples {
            s.domain = domain;
        }
        self
    }

    /// Copy with all labels removed.
    pub fn without_labels(&self) -> Self {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.label = None;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub seed: u64,
}

/// Z-score with the population standard deviation.
pub fn zscore_normalize(series: &TimeSeries) -> Result<TimeSeries> {
    let values = zscore(&series.values)?;
    Ok(TimeSeries {
        values,
        sample_rate: series.sample_rate,
        band_limit: series.band_limit,
    })
}

pub(crate) fn zscore(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::DegenerateSignal("empty recording".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return Err(Error::DegenerateSignal(format!(
            "standard deviation {std:e} below 1e-12"
        )));
    }
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}

/// Consecutive non-overlapping windows; the trailing remainder is dropped.
pub fn segment(
    series: &TimeSeries,
    window_len: usize,
    label: Option<usize>,
    domain: Domain,
) -> Result<Vec<Sample>> {
    if !window_len.is_power_of_two() {
        return Err(Error::Shape(format!(
            "window length {window_len} is not a power of two"
        )));
    }
    Ok(series
        .values
        .chunks_exact(window_len)
        .map(|w| Sample::new(w.to_vec(), label, domain))
        .collect())
}

/// Mean squared value.
pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// `10·log10(P_s / P_n)`, with `P_n` taken from `noisy - clean`.
pub fn measure_snr_db(clean: &[f64], noisy: &[f64]) -> f64 {
    let noise: Vec<f64> = noisy.iter().zip(clean).map(|(y, x)| y - x).collect();
    10.0 * (power(clean) / power(&noise)).log10()
}

/// Adds white Gaussian noise whose empirical power is exactly
/// `P_s / 10^(snr_db/10)`.
pub fn add_noise<R: Rng + ?Sized>(sample: &Sample, spec: &NoiseSpec, rng: &mut R) -> Result<Sample> {
    if !spec.snr_db.is_finite() {
        return Err(Error::Range(format!("snr_db {} is not finite", spec.snr_db)));
    }
    let ps = power(&sample.window);
    if ps == 0.0 {
        return Err(Error::DegenerateSignal("window has zero power".into()));
    }
    let mut noise: Vec<f64> = (0..sample.window.len())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let pn_raw = power(&noise);
    if pn_raw == 0.0 {
        return Err(Error::DegenerateSignal("generated noise has zero power".into()));
    }
    let pn_target = ps / 10f64.powf(spec.snr_db / 10.0);
    let scale = (pn_target / pn_raw).sqrt();
    for v in &mut noise {
        *v *= scale;
    }
    let window = sample.window.iter().zip(&noise).map(|(x, n)| x + n).collect();
    Ok(Sample::new(window, sample.label, sample.domain))
}

/// Noise every sample of `dataset` with a stream seeded from `spec.seed`.
pub fn add_noise_dataset(dataset: &Dataset, spec: &NoiseSpec) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let samples = dataset
        .samples
        .iter()
        .map(|s| add_noise(s, spec, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        samples,
        num_classes: dataset.num_classes,
    })
}

/// Smallest number of decomposition layers whose band width
/// `band_limit / 2^L` is no wider than `target_resolution`.
pub fn choose_layers(band_limit: f64, target_resolution: f64) -> Result<usize> {
    if !(target_resolution > 0.0 && target_resolution <= band_limit) {
        return Err(Error::Range(format!(
            "target resolution {target_resolution} outside (0, {band_limit}]"
        )));
    }
    let mut layers = 0;
    let mut width = band_limit;
    while width > target_resolution {
        width /= 2.0;
        layers += 1;
    }
    Ok(layers)
}
