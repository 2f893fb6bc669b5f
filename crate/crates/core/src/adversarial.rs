//! Domain adversarial stage: a four-block 1-D CNN feature extractor, a
//! softmax classifier and a sigmoid domain discriminator behind a gradient
//! reversal connection.
//!
//! Feature extractor blocks are `conv(k=7, circular) -> ReLU -> maxpool(2)`
//! with 8/16/32/64 channels, followed by global average pooling to a
//! 64-dimensional feature. The discriminator is `64 -> 32 -> ReLU -> 1 ->
//! sigmoid`. Source samples are domain 1, target samples domain 0.

use rand::Rng;

use crate::optim::{Group, Parameterized};
use crate::{Error, Result};

pub const KERNEL: usize = 7;
pub const CHANNELS: [usize; 4] = [8, 16, 32, 64];
pub const FEATURE_DIM: usize = 64;
pub const DISC_HIDDEN: usize = 32;
/// Floor applied inside every logarithm of the losses.
pub const LOG_FLOOR: f64 = 1e-12;
const PAD: usize = KERNEL / 2;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `λ = 2/(1 + e^(-10p)) - 1` for training progress `p ∈ [0, 1]`.
pub fn lambda_schedule(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Range(format!("training progress {p} outside [0, 1]")));
    }
    Ok(2.0 / (1.0 + (-10.0 * p).exp()) - 1.0)
}

/// Identity forward; backward multiplies by `-λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReverse {
    pub lambda: f64,
}

impl GradReverse {
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    pub fn backward(&self, grad: &[f64]) -> Vec<f64> {
        grad.iter().map(|g| -self.lambda * g).collect()
    }
}

/// `-(1/N) Σ log(max(p_{y_i}, 1e-12))`.
pub fn classification_loss(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (p, &y) in probs.iter().zip(labels) {
        let py = *p
            .get(y)
            .ok_or_else(|| Error::Label(format!("label {y} outside [0, {})", p.len())))?;
        total -= py.max(LOG_FLOOR).ln();
    }
    Ok(total / probs.len() as f64)
}

/// `∂L_C/∂logits` for each sample: `(p - onehot(y)) / N`.
///
/// The floor only bounds the reported loss value; the gradient is that of
/// the unclamped cross-entropy, so a confidently wrong sample still pulls.
pub fn classification_grad(probs: &[Vec<f64>], labels: &[usize]) -> Vec<Vec<f64>> {
    let n = probs.len() as f64;
    probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            p.iter()
                .enumerate()
                .map(|(c, pc)| (pc - if c == y { 1.0 } else { 0.0 }) / n)
                .collect()
        })
        .collect()
}

/// `-(1/N_s) Σ log d_s - (1/N_t) Σ log(1 - d_t)`; an empty side contributes 0.
pub fn domain_loss(source_probs: &[f64], target_probs: &[f64]) -> f64 {
    let mut loss = 0.0;
    if !source_probs.is_empty() {
        loss -= source_probs.iter().map(|d| d.max(LOG_FLOOR).ln()).sum::<f64>()
            / source_probs.len() as f64;
    }
    if !target_probs.is_empty() {
        loss -= target_probs
            .iter()
            .map(|d| (1.0 - d).max(LOG_FLOOR).ln())
            .sum::<f64>()
            / target_probs.len() as f64;
    }
    loss
}

/// `∂L_D/∂z` with respect to the discriminator logits of each side:
/// `(d - 1)/N_s` for source, `d/N_t` for target. As with
/// [`classification_grad`], the floor does not zero the gradient, otherwise a
/// saturated discriminator could never recover.
pub fn domain_grad(source_probs: &[f64], target_probs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let ns = source_probs.len() as f64;
    let nt = target_probs.len() as f64;
    let gs = source_probs.iter().map(|&d| (d - 1.0) / ns).collect();
    let gt = target_probs.iter().map(|&d| d / nt).collect();
    (gs, gt)
}

/// Dense layer `y = W x + b`, `W` row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    /// Uniform weights with bound `sqrt(gain / in_dim)`, zero bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, gain: f64, rng: &mut R) -> Self {
        let bound = (gain / in_dim as f64).sqrt();
        let mut l = Self::zeros(in_dim, out_dim);
        for w in &mut l.weight {
            *w = rng.random_range(-bound..bound);
        }
        l
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates parameter gradients into `grads`; returns `∂/∂x`.
    pub fn backward(&self, x: &[f64], up: &[f64], grads: &mut Linear) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for (o, &u) in up.iter().enumerate() {
            if u == 0.0 {
                continue;
            }
            grads.bias[o] += u;
            let row = o * self.in_dim;
            for i in 0..self.in_dim {
                grads.weight[row + i] += u * x[i];
                dx[i] += u * self.weight[row + i];
            }
        }
        dx
    }
}

/// One convolution block: circular conv (kernel 7), ReLU, max-pool 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    /// `[out][in][KERNEL]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_ch: usize,
    pub out_ch: usize,
}

struct BlockTape {
    /// Circularly padded input, `[in][n + KERNEL - 1]`.
    padded: Vec<f64>,
    /// Index into the conv output `[out][n]` selected by each pool cell.
    argmax: Vec<u32>,
    /// Pooled (post-ReLU) output `[out][n/2]`.
    pooled: Vec<f64>,
    n: usize,
}

impl ConvBlock {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            weight: vec![0.0; out_ch * in_ch * KERNEL],
            bias: vec![0.0; out_ch],
            in_ch,
            out_ch,
        }
    }

    /// He-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (in_ch * KERNEL) as f64).sqrt();
        let mut b = Self::zeros(in_ch, out_ch);
        for w in &mut b.weight {
            *w = rng.random_range(-bound..bound);
        }
        b
    }

    /// Convolution only (no ReLU/pool), `[out][n]`.
    pub fn conv(&self, x: &[f64], n: usize) -> Vec<f64> {
        let padded = pad(x, self.in_ch, n);
        self.conv_padded(&padded, n)
    }

    fn conv_padded(&self, padded: &[f64], n: usize) -> Vec<f64> {
        let pn = n + KERNEL - 1;
        let mut out = vec![0.0; self.out_ch * n];
        for (o, orow) in out.chunks_exact_mut(n).enumerate() {
            orow.iter_mut().for_each(|v| *v = self.bias[o]);
            for i in 0..self.in_ch {
                let xrow = &padded[i * pn..(i + 1) * pn];
                let w = &self.weight[(o * self.in_ch + i) * KERNEL..][..KERNEL];
                for (k, &wk) in w.iter().enumerate() {
                    for (acc, xv) in orow.iter_mut().zip(&xrow[k..k + n]) {
                        *acc += wk * xv;
                    }
                }
            }
        }
        out
    }

    fn forward(&self, x: &[f64], n: usize) -> (Vec<f64>, BlockTape) {
        let padded = pad(x, self.in_ch, n);
        let conv = self.conv_padded(&padded, n);
        let half = n / 2;
        let mut pooled = vec![0.0; self.out_ch * half];
        let mut argmax = vec![0u32; self.out_ch * half];
        for o in 0..self.out_ch {
            for t in 0..half {
                let a = o * n + 2 * t;
                let (idx, v) = if conv[a + 1] > conv[a] {
                    (a + 1, conv[a + 1])
                } else {
                    (a, conv[a])
                };
                pooled[o * half + t] = v.max(0.0);
                argmax[o * half + t] = idx as u32;
            }
        }
        let tape = BlockTape {
            padded,
            argmax,
            pooled: pooled.clone(),
            n,
        };
        (pooled, tape)
    }

    /// Returns `∂/∂input` when `need_input` is set.
    fn backward(
        &self,
        tape: &BlockTape,
        up: &[f64],
        grads: &mut ConvBlock,
        need_input: bool,
    ) -> Option<Vec<f64>> {
        let n = tape.n;
        let pn = n + KERNEL - 1;
        let mut gconv = vec![0.0; self.out_ch * n];
        for ((u, &idx), &p) in up.iter().zip(&tape.argmax).zip(&tape.pooled) {
            if p > 0.0 {
                gconv[idx as usize] += u;
            }
        }
        let mut gpad = if need_input {
            vec![0.0; self.in_ch * pn]
        } else {
            Vec::new()
        };
        for (o, grow) in gconv.chunks_exact(n).enumerate() {
            if grow.iter().all(|g| *g == 0.0) {
                continue;
            }
            grads.bias[o] += grow.iter().sum::<f64>();
            for i in 0..self.in_ch {
                let xrow = &tape.padded[i * pn..(i + 1) * pn];
                let base = (o * self.in_ch + i) * KERNEL;
                for k in 0..KERNEL {
                    grads.weight[base + k] += grow
                        .iter()
                        .zip(&xrow[k..k + n])
                        .map(|(g, x)| g * x)
                        .sum::<f64>();
                }
                if need_input {
                    let prow = &mut gpad[i * pn..(i + 1) * pn];
                    for k in 0..KERNEL {
                        let wk = self.weight[base + k];
                        for (acc, g) in prow[k..k + n].iter_mut().zip(grow) {
                            *acc += wk * g;
                        }
                    }
                }
            }
        }
        need_input.then(|| unpad(&gpad, self.in_ch, n))
    }
}

/// Circular padding of `PAD` on both sides, per channel.
fn pad(x: &[f64], ch: usize, n: usize) -> Vec<f64> {
    let pn = n + KERNEL - 1;
    let mut out = vec![0.0; ch * pn];
    for c in 0..ch {
        let src = &x[c * n..(c + 1) * n];
        let dst = &mut out[c * pn..(c + 1) * pn];
        for (j, d) in dst.iter_mut().enumerate() {
            *d = src[(j + n * PAD - PAD) % n];
        }
    }
    out
}

/// Adjoint of [`pad`]: folds padded-position gradients back circularly.
fn unpad(g: &[f64], ch: usize, n: usize) -> Vec<f64> {
    let pn = n + KERNEL - 1;
    let mut out = vec![0.0; ch * n];
    for c in 0..ch {
        let src = &g[c * pn..(c + 1) * pn];
        let dst = &mut out[c * n..(c + 1) * n];
        for (j, v) in src.iter().enumerate() {
            dst[(j + n * PAD - PAD) % n] += v;
        }
    }
    out
}

/// Four conv blocks and global average pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub blocks: Vec<ConvBlock>,
}

pub struct FeatureTape {
    blocks: Vec<BlockTape>,
    gap_len: usize,
}

impl FeatureExtractor {
    pub fn zeros() -> Self {
        let mut in_ch = 1;
        let blocks = CHANNELS
            .iter()
            .map(|&c| {
                let b = ConvBlock::zeros(in_ch, c);
                in_ch = c;
                b
            })
            .collect();
        Self { blocks }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut in_ch = 1;
        let blocks = CHANNELS
            .iter()
            .map(|&c| {
                let b = ConvBlock::init(in_ch, c, rng);
                in_ch = c;
                b
            })
            .collect();
        Self { blocks }
    }

    pub fn check_window(window_len: usize) -> Result<()> {
        let div = 1 << CHANNELS.len();
        if window_len == 0 || window_len % div != 0 {
            return Err(Error::Shape(format!(
                "window length {window_len} not divisible by {div}"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, window: &[f64]) -> Result<(Vec<f64>, FeatureTape)> {
        Self::check_window(window.len())?;
        let mut n = window.len();
        let mut x = window.to_vec();
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, t) = b.forward(&x, n);
            tapes.push(t);
            x = y;
            n /= 2;
        }
        let feat = x
            .chunks_exact(n)
            .map(|row| row.iter().sum::<f64>() / n as f64)
            .collect();
        Ok((
            feat,
            FeatureTape {
                blocks: tapes,
                gap_len: n,
            },
        ))
    }

    /// Accumulates into `grads`; returns `∂/∂window` when `need_input`.
    pub fn backward(
        &self,
        tape: &FeatureTape,
        grad_feature: &[f64],
        grads: &mut FeatureExtractor,
        need_input: bool,
    ) -> Option<Vec<f64>> {
        let n = tape.gap_len;
        let mut up: Vec<f64> = grad_feature
            .iter()
            .flat_map(|g| std::iter::repeat(g / n as f64).take(n))
            .collect();
        for (i, (b, t)) in self.blocks.iter().zip(&tape.blocks).enumerate().rev() {
            let need = i > 0 || need_input;
            match b.backward(t, &up, &mut grads.blocks[i], need) {
                Some(g) => up = g,
                None => return None,
            }
        }
        Some(up)
    }
}

pub fn extract_features(window: &[f64], fe: &FeatureExtractor) -> Result<Vec<f64>> {
    fe.forward(window).map(|(f, _)| f)
}

pub fn classify(feature: &[f64], head: &Linear) -> Result<Vec<f64>> {
    if feature.len() != head.in_dim {
        return Err(Error::Shape(format!(
            "feature of length {} for a head expecting {}",
            feature.len(),
            head.in_dim
        )));
    }
    Ok(softmax(&head.forward(feature)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub hidden: Linear,
    pub out: Linear,
}

pub struct DiscTape {
    input: Vec<f64>,
    hidden: Vec<f64>,
}

impl Discriminator {
    pub fn zeros() -> Self {
        Self {
            hidden: Linear::zeros(FEATURE_DIM, DISC_HIDDEN),
            out: Linear::zeros(DISC_HIDDEN, 1),
        }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            hidden: Linear::init(FEATURE_DIM, DISC_HIDDEN, 6.0, rng),
            out: Linear::init(DISC_HIDDEN, 1, 3.0, rng),
        }
    }

    /// Returns the logit.
    pub fn forward(&self, feature: &[f64]) -> (f64, DiscTape) {
        let hidden: Vec<f64> = self.hidden.forward(feature).into_iter().map(|v| v.max(0.0)).collect();
        let z = self.out.forward(&hidden)[0];
        (
            z,
            DiscTape {
                input: feature.to_vec(),
                hidden,
            },
        )
    }

    /// `∂/∂feature` given `∂/∂logit`.
    pub fn backward(&self, tape: &DiscTape, grad_logit: f64, grads: &mut Discriminator) -> Vec<f64> {
        let mut gh = self.out.backward(&tape.hidden, &[grad_logit], &mut grads.out);
        for (g, h) in gh.iter_mut().zip(&tape.hidden) {
            if *h <= 0.0 {
                *g = 0.0;
            }
        }
        self.hidden.backward(&tape.input, &gh, &mut grads.hidden)
    }
}

pub fn discriminate(feature: &[f64], disc: &Discriminator) -> Result<f64> {
    if feature.len() != FEATURE_DIM {
        return Err(Error::Shape(format!("feature length {} != {FEATURE_DIM}", feature.len())));
    }
    Ok(sigmoid(disc.forward(feature).0))
}

/// `θ_F`, `θ_C` and `θ_D`.
#[derive(Debug, Clone, PartialEq)]
pub struct DannParams {
    pub features: FeatureExtractor,
    pub classifier: Linear,
    pub discriminator: Discriminator,
}

impl DannParams {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            features: FeatureExtractor::zeros(),
            classifier: Linear::zeros(FEATURE_DIM, num_classes),
            discriminator: Discriminator::zeros(),
        }
    }

    pub fn init<R: Rng + ?Sized>(num_classes: usize, rng: &mut R) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
        }
        Ok(Self {
            features: FeatureExtractor::init(rng),
            classifier: Linear::init(FEATURE_DIM, num_classes, 3.0, rng),
            discriminator: Discriminator::init(rng),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_dim
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.num_classes())
    }
}

impl Parameterized for DannParams {
    fn visit(&self, f: &mut dyn FnMut(&str, Group, &[f64])) {
        for (i, b) in self.features.blocks.iter().enumerate() {
            f(&format!("features.conv{i}.weight"), Group::Features, &b.weight);
            f(&format!("features.conv{i}.bias"), Group::Features, &b.bias);
        }
        f("classifier.weight", Group::Classifier, &self.classifier.weight);
        f("classifier.bias", Group::Classifier, &self.classifier.bias);
        let d = &self.discriminator;
        f("discriminator.hidden.weight", Group::Discriminator, &d.hidden.weight);
        f("discriminator.hidden.bias", Group::Discriminator, &d.hidden.bias);
        f("discriminator.out.weight", Group::Discriminator, &d.out.weight);
        f("discriminator.out.bias", Group::Discriminator, &d.out.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, Group, &mut [f64])) {
        for (i, b) in self.features.blocks.iter_mut().enumerate() {
            f(&format!("features.conv{i}.weight"), Group::Features, &mut b.weight);
            f(&format!("features.conv{i}.bias"), Group::Features, &mut b.bias);
        }
        f("classifier.weight", Group::Classifier, &mut self.classifier.weight);
        f("classifier.bias", Group::Classifier, &mut self.classifier.bias);
        let d = &mut self.discriminator;
        f("discriminator.hidden.weight", Group::Discriminator, &mut d.hidden.weight);
        f("discriminator.hidden.bias", Group::Discriminator, &mut d.hidden.bias);
        f("discriminator.out.weight", Group::Discriminator, &mut d.out.weight);
        f("discriminator.out.bias", Group::Discriminator, &mut d.out.bias);
    }
}
