//! End-to-end training and evaluation.
//!
//! Every random draw of a run derives from its seed through separate
//! ChaCha streams (noise, split, initialization, batch order), so the
//! variants of an ablation share noise and splits exactly.

mod batch;
mod model;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use batch::{iterations, make_batches, split_hash, stratified_split, subset, Split};
pub use model::{argmax, GradMode, Model, StepLosses};

use crate::adversarial::lambda_schedule;
use crate::optim::{finite_diff_check, GradCheckReport, Group, ParamRegistry, Parameterized, Schedule};
use crate::signal::{add_noise_dataset, Dataset, Domain, NoiseSpec, Sample};
use crate::smartfilter::Strategy;
use crate::wavelet::Wavelet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Frozen WPT plus one LWPT, guided.
    Sfdann,
    /// Two independent LWPT instances.
    SfdannV,
    /// Adversarial training on raw windows.
    DannPlain,
    /// Source-only CNN classifier.
    CnnOnly,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Sfdann,
        Variant::SfdannV,
        Variant::DannPlain,
        Variant::CnnOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sfdann => "sfdann",
            Variant::SfdannV => "sfdann_v",
            Variant::DannPlain => "dann_plain",
            Variant::CnnOnly => "cnn_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.to_ascii_lowercase().replace('-', "_");
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }

    /// Routing a variant uses unless told otherwise.
    pub fn default_strategy(self) -> Strategy {
        match self {
            Variant::Sfdann => Strategy::TargetToLwpt,
            Variant::SfdannV => Strategy::BothLwpt,
            Variant::DannPlain | Variant::CnnOnly => Strategy::None,
        }
    }

    pub fn check_strategy(self, strategy: Strategy) -> Result<()> {
        let ok = match self {
            Variant::Sfdann => matches!(strategy, Strategy::TargetToLwpt | Strategy::SourceToLwpt),
            Variant::SfdannV => strategy == Strategy::BothLwpt,
            Variant::DannPlain | Variant::CnnOnly => strategy == Strategy::None,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "strategy {} is not valid for variant {}",
                strategy.name(),
                self.name()
            )))
        }
    }

    /// Whether windows pass through the smart filter.
    pub fn filtered(self) -> bool {
        matches!(self, Variant::Sfdann | Variant::SfdannV)
    }

    /// Whether the discriminator and target batches take part.
    pub fn adversarial(self) -> bool {
        self != Variant::CnnOnly
    }
}

/// When the progress `p` fed to the λ schedule advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaMode {
    PerEpoch,
    PerIteration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub strategy: Strategy,
    pub wavelet: Wavelet,
    pub layers: usize,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Guidance weight; ignored by the unfiltered variants.
    pub mu: f64,
    pub seeds: Vec<u64>,
    pub train_fraction: f64,
    pub lambda_mode: LambdaMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Sfdann,
            strategy: Strategy::TargetToLwpt,
            wavelet: Wavelet::Db4,
            layers: 5,
            batch: 64,
            epochs: 300,
            lr: 0.001,
            mu: 1.0,
            seeds: vec![0, 1, 2, 3, 4],
            train_fraction: 0.8,
            lambda_mode: LambdaMode::PerEpoch,
        }
    }
}

impl TrainConfig {
    /// Copy with `variant` and a strategy valid for it.
    pub fn with_variant(&self, variant: Variant, strategy: Option<Strategy>) -> Self {
        Self {
            variant,
            strategy: strategy.unwrap_or(variant.default_strategy()),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.variant.check_strategy(self.strategy)?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("filter needs at least one layer".into()));
        }
        if !(self.mu >= 0.0) {
            return Err(Error::Config(format!("guidance weight {} must be >= 0", self.mu)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train fraction must lie in (0, 1)".into()));
        }
        self.schedule().validate()
    }

    pub fn schedule(&self) -> Schedule {
        Schedule::scaled(self.lr, self.epochs)
    }

    /// Guidance weight actually applied.
    pub fn effective_mu(&self) -> f64 {
        if self.variant.filtered() {
            self.mu
        } else {
            0.0
        }
    }
}

/// Independent random streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Noise = 1,
    Split = 2,
    Init = 3,
    Batches = 4,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Per-epoch averages of the loss terms plus the schedule values used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_c: f64,
    pub l_d: f64,
    pub l_g: f64,
    pub lambda: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: Model,
    pub history: Vec<EpochLog>,
}

fn windows_and_labels(ds: &Dataset, idx: &[usize]) -> (Vec<Vec<f64>>, Vec<usize>) {
    let xs = idx.iter().map(|&i| ds.samples[i].window.clone()).collect();
    let ys = idx
        .iter()
        .map(|&i| ds.samples[i].label.unwrap_or(0))
        .collect();
    (xs, ys)
}

/// Trains one model from the seed's init and batch streams.
pub fn fit(config: &TrainConfig, source: &Dataset, target: &Dataset, seed: u64) -> Result<Fitted> {
    config.validate()?;
    let w = source
        .window_len()
        .ok_or_else(|| Error::Config("empty source training set".into()))?;
    if target.window_len().is_some_and(|t| t != w) {
        return Err(Error::Shape("source and target window lengths differ".into()));
    }
    crate::adversarial::FeatureExtractor::check_window(w)?;
    let iters = iterations(source.len(), target.len(), config.batch)?;

    let mut model = Model::new(
        config.variant,
        config.strategy,
        config.wavelet,
        config.layers,
        source.num_classes,
        &mut stream(seed, Stream::Init),
    )?;
    let mut batch_rng = stream(seed, Stream::Batches);
    let mut registry = ParamRegistry::new(&model);
    let schedule = config.schedule();
    let mu = config.effective_mu();
    let adversarial = config.variant.adversarial();
    let lambda_at = |epoch: usize, it: usize| -> Result<f64> {
        if !adversarial {
            return Ok(0.0);
        }
        let p = match config.lambda_mode {
            LambdaMode::PerEpoch => epoch as f64 / config.epochs as f64,
            LambdaMode::PerIteration => {
                (epoch * iters + it) as f64 / (config.epochs * iters) as f64
            }
        };
        lambda_schedule(p)
    };

    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = schedule.lr_at(epoch)?;
        let batches = make_batches(source, target, config.batch, &mut batch_rng)?;
        let mut sum = StepLosses::default();
        for (it, (si, ti)) in batches.iter().enumerate() {
            let lambda = lambda_at(epoch, it)?;
            let (xs, ys) = windows_and_labels(source, si);
            let xt: Vec<Vec<f64>> = ti.iter().map(|&i| target.samples[i].window.clone()).collect();
            let mut grads = model.zeros_like();
            let l = model.forward_backward(&xs, &ys, &xt, lambda, mu, &mut grads, GradMode::Train)?;
            registry.load_grads(&grads)?;
            registry.adam_step(&mut model, lr)?;
            sum.l_c += l.l_c;
            sum.l_d += l.l_d;
            sum.l_g += l.l_g;
        }
        let n = batches.len() as f64;
        history.push(EpochLog {
            epoch,
            l_c: sum.l_c / n,
            l_d: sum.l_d / n,
            l_g: sum.l_g / n,
            lambda: lambda_at(epoch, 0)?,
            lr,
        });
    }
    Ok(Fitted { model, history })
}

/// Fraction of correct predictions.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Accuracy of `model` on a labeled set along `domain`'s filter path.
pub fn evaluate(model: &Model, test: &Dataset, domain: Domain) -> Result<f64> {
    let truth = test
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| s.label.ok_or_else(|| Error::Label(format!("test sample {i} has no label"))))
        .collect::<Result<Vec<_>>>()?;
    let windows: Vec<Vec<f64>> = test.samples.iter().map(|s| s.window.clone()).collect();
    accuracy(&model.predict(&windows, domain)?, &truth)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Which domains receive injected noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseDomain {
    None,
    Source,
    Target,
    Both,
}

impl NoiseDomain {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Some(NoiseDomain::None),
            "source" => Some(NoiseDomain::Source),
            "target" => Some(NoiseDomain::Target),
            "both" => Some(NoiseDomain::Both),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseDomain::None => "none",
            NoiseDomain::Source => "source",
            NoiseDomain::Target => "target",
            NoiseDomain::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisePlan {
    pub domain: NoiseDomain,
    pub snr_db: f64,
}

impl NoisePlan {
    pub const NONE: NoisePlan = NoisePlan {
        domain: NoiseDomain::None,
        snr_db: f64::INFINITY,
    };
}

/// Noise-injected, split data of one seed. Target training windows carry no labels.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train_s: Dataset,
    pub test_s: Dataset,
    pub train_t: Dataset,
    pub test_t: Dataset,
    pub split_hash: String,
}

fn tag(ds: &Dataset, domain: Domain) -> Dataset {
    Dataset {
        samples: ds
            .samples
            .iter()
            .map(|s| Sample::new(s.window.clone(), s.label, domain))
            .collect(),
        num_classes: ds.num_classes,
    }
}

/// Tags both sets with their domain and injects the seed's noise draws.
pub fn apply_noise(
    source: &Dataset,
    target: &Dataset,
    noise: &NoisePlan,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if source.num_classes != target.num_classes {
        return Err(Error::Config(format!(
            "source has {} classes, target {}",
            source.num_classes, target.num_classes
        )));
    }
    let mut noise_rng = stream(seed, Stream::Noise);
    let (seed_s, seed_t) = (noise_rng.next_u64(), noise_rng.next_u64());
    let mut s = tag(source, Domain::Source);
    let mut t = tag(target, Domain::Target);
    if matches!(noise.domain, NoiseDomain::Source | NoiseDomain::Both) {
        s = add_noise_dataset(&s, &NoiseSpec { snr_db: noise.snr_db, seed: seed_s })?;
    }
    if matches!(noise.domain, NoiseDomain::Target | NoiseDomain::Both) {
        t = add_noise_dataset(&t, &NoiseSpec { snr_db: noise.snr_db, seed: seed_t })?;
    }
    Ok((s, t))
}

pub fn prepare(
    source: &Dataset,
    target: &Dataset,
    noise: &NoisePlan,
    train_fraction: f64,
    seed: u64,
) -> Result<Prepared> {
    let (s, t) = apply_noise(source, target, noise, seed)?;
    let mut split_rng = stream(seed, Stream::Split);
    let sp_s = stratified_split(&s, train_fraction, &mut split_rng)?;
    let sp_t = stratified_split(&t, train_fraction, &mut split_rng)?;
    Ok(Prepared {
        train_s: subset(&s, &sp_s.train),
        test_s: subset(&s, &sp_s.test),
        train_t: subset(&t, &sp_t.train).without_labels(),
        test_t: subset(&t, &sp_t.test),
        split_hash: split_hash(&[&sp_s, &sp_t]),
    })
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Target-domain test accuracy.
    pub accuracy: f64,
    pub source_accuracy: f64,
    pub split_hash: String,
    pub history: Vec<EpochLog>,
    pub model: Model,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcomes: Vec<SeedOutcome>,
    pub mean: f64,
    pub std: f64,
}

impl RunResult {
    pub fn accuracies(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.accuracy).collect()
    }
}

/// Prepares, fits and evaluates once per seed.
pub fn run_seed(
    config: &TrainConfig,
    source: &Dataset,
    target: &Dataset,
    noise: &NoisePlan,
    seed: u64,
) -> Result<SeedOutcome> {
    let data = prepare(source, target, noise, config.train_fraction, seed)?;
    let fitted = fit(config, &data.train_s, &data.train_t, seed)?;
    Ok(SeedOutcome {
        seed,
        accuracy: evaluate(&fitted.model, &data.test_t, Domain::Target)?,
        source_accuracy: evaluate(&fitted.model, &data.test_s, Domain::Source)?,
        split_hash: data.split_hash,
        history: fitted.history,
        model: fitted.model,
    })
}

pub fn run_seeds(
    config: &TrainConfig,
    source: &Dataset,
    target: &Dataset,
    noise: &NoisePlan,
) -> Result<RunResult> {
    if config.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let outcomes = config
        .seeds
        .iter()
        .map(|&s| run_seed(config, source, target, noise, s))
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = mean_std(&outcomes.iter().map(|o| o.accuracy).collect::<Vec<_>>());
    Ok(RunResult {
        outcomes,
        mean,
        std,
    })
}

/// Size of the gradient-check network.
pub const TINY_WINDOW: usize = 64;
pub const TINY_LAYERS: usize = 2;
pub const TINY_CLASSES: usize = 2;
pub const TINY_BATCH: usize = 2;
pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Central-difference check of the full objective on the tiny SFDANN
/// configuration. `fault` negates the largest analytic entry of a group
/// before comparing, to show the check can fail.
pub fn tiny_gradcheck(seed: u64, fault: Option<Group>) -> Result<GradCheckReport> {
    use rand::Rng;
    let mut rng = stream(seed, Stream::Init);
    let mut model = Model::new(
        Variant::Sfdann,
        Strategy::TargetToLwpt,
        Wavelet::Db4,
        TINY_LAYERS,
        TINY_CLASSES,
        &mut rng,
    )?;
    // Move off the identity initialization so the thresholds are active.
    if let Some(p) = model.filter.lwpt.as_mut() {
        for k in p.kernels.iter_mut().flatten() {
            *k += rng.random_range(-0.05..0.05);
        }
        for b in p.biases.iter_mut().flatten() {
            *b = rng.random_range(0.02..0.3);
        }
    }
    let mut window = |scale: f64| -> Vec<f64> {
        (0..TINY_WINDOW).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
    };
    let xs: Vec<Vec<f64>> = (0..TINY_BATCH).map(|_| window(1.0)).collect();
    let xt: Vec<Vec<f64>> = (0..TINY_BATCH).map(|_| window(0.4)).collect();
    let ys: Vec<usize> = (0..TINY_BATCH).map(|i| i % TINY_CLASSES).collect();
    let (lambda, mu) = (0.7, 1.5);

    let mut grads = model.zeros_like();
    model.forward_backward(&xs, &ys, &xt, lambda, mu, &mut grads, GradMode::Objective)?;
    if let Some(group) = fault {
        let mut best: Option<(f64, usize, usize)> = None;
        let mut t_idx = 0;
        grads.visit(&mut |_, g, t| {
            if g == group {
                for (i, v) in t.iter().enumerate() {
                    if best.map_or(true, |(m, _, _)| v.abs() > m) {
                        best = Some((v.abs(), t_idx, i));
                    }
                }
            }
            t_idx += 1;
        });
        let (_, bt, bi) = best.ok_or_else(|| Error::Config(format!("no parameters in group {group}")))?;
        let mut t_idx = 0;
        grads.visit_mut(&mut |_, _, t| {
            if t_idx == bt {
                t[bi] = -t[bi];
            }
            t_idx += 1;
        });
    }
    let objective = |m: &Model| {
        m.objective(&xs, &ys, &xt, lambda, mu)
            .map_or(f64::NAN, |l| l.total(lambda, mu))
    };
    Ok(finite_diff_check(&model, &grads, objective, GRADCHECK_EPS))
}
