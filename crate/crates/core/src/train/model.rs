//! The full network, filter plus adversarial stage, and one joint
//! forward/backward pass of `L = L_C - λ·L_D + μ·L_G`.

use rand::Rng;

use crate::adversarial::{
    classification_grad, classification_loss, classify, domain_grad, domain_loss, sigmoid,
    DannParams, GradReverse,
};
use crate::optim::{Group, Parameterized};
use crate::signal::Domain;
use crate::smartfilter::{filter_backward, filter_batch, FilterRouting, Strategy};
use crate::wavelet::Wavelet;
use crate::{Error, Result};

use super::Variant;

/// Filter routing (`θ_S`) followed by the DANN parameters (`θ_F`, `θ_C`, `θ_D`).
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub variant: Variant,
    pub filter: FilterRouting,
    pub dann: DannParams,
}

/// What the discriminator gradient buffer should hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// `θ_D` receives `+∂L_D` (it minimizes the domain loss).
    Train,
    /// Every group receives the derivative of the scalar objective, so
    /// `θ_D` receives `-λ·∂L_D`. Used for finite-difference checks.
    Objective,
}

/// Per-batch loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLosses {
    pub l_c: f64,
    pub l_d: f64,
    pub l_g: f64,
}

impl StepLosses {
    pub fn total(&self, lambda: f64, mu: f64) -> f64 {
        crate::optim::total_loss(self.l_c, self.l_d, self.l_g, lambda, mu)
    }

    fn check(self) -> Result<Self> {
        if [self.l_c, self.l_d, self.l_g].iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::NonFinite(format!(
                "loss L_C={} L_D={} L_G={}",
                self.l_c, self.l_d, self.l_g
            )))
        }
    }
}

impl Model {
    pub fn new<R: Rng + ?Sized>(
        variant: Variant,
        strategy: Strategy,
        wavelet: Wavelet,
        levels: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        variant.check_strategy(strategy)?;
        Ok(Self {
            variant,
            filter: FilterRouting::new(strategy, wavelet, levels),
            dann: DannParams::init(num_classes, rng)?,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            variant: self.variant,
            filter: self.filter.zeros_like(),
            dann: self.dann.zeros_like(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.dann.num_classes()
    }

    /// Windows after the filter path used by `domain`.
    pub fn filtered(&self, windows: &[Vec<f64>], domain: Domain) -> Result<Vec<Vec<f64>>> {
        self.filter.apply(windows, domain)
    }

    pub fn features(&self, windows: &[Vec<f64>], domain: Domain) -> Result<Vec<Vec<f64>>> {
        self.filtered(windows, domain)?
            .iter()
            .map(|w| self.dann.features.forward(w).map(|(f, _)| f))
            .collect()
    }

    /// Class probabilities along the deployed path of `domain`.
    pub fn predict_proba(&self, windows: &[Vec<f64>], domain: Domain) -> Result<Vec<Vec<f64>>> {
        self.features(windows, domain)?
            .iter()
            .map(|f| classify(f, &self.dann.classifier))
            .collect()
    }

    /// Arg-max class, ties going to the lowest index.
    pub fn predict(&self, windows: &[Vec<f64>], domain: Domain) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(windows, domain)?
            .iter()
            .map(|p| argmax(p))
            .collect())
    }

    /// Scalar objective only, no gradients.
    pub fn objective(
        &self,
        xs: &[Vec<f64>],
        ys: &[usize],
        xt: &[Vec<f64>],
        lambda: f64,
        mu: f64,
    ) -> Result<StepLosses> {
        self.step(xs, ys, xt, lambda, mu, None)
    }

    /// Forward pass plus gradients of one paired batch, accumulated into `grads`.
    pub fn forward_backward(
        &self,
        xs: &[Vec<f64>],
        ys: &[usize],
        xt: &[Vec<f64>],
        lambda: f64,
        mu: f64,
        grads: &mut Model,
        mode: GradMode,
    ) -> Result<StepLosses> {
        self.step(xs, ys, xt, lambda, mu, Some((grads, mode)))
    }

    fn step(
        &self,
        xs: &[Vec<f64>],
        ys: &[usize],
        xt: &[Vec<f64>],
        lambda: f64,
        mu: f64,
        mut back: Option<(&mut Model, GradMode)>,
    ) -> Result<StepLosses> {
        if xs.len() != ys.len() {
            return Err(Error::Shape(format!("{} windows for {} labels", xs.len(), ys.len())));
        }
        let adversarial = self.variant.adversarial();
        let pass = if self.variant.filtered() {
            Some(filter_batch(xs, if adversarial { xt } else { &[] }, &self.filter)?)
        } else {
            None
        };
        let (rs, rt): (&[Vec<f64>], &[Vec<f64>]) = match &pass {
            Some(p) => (&p.recon_s, &p.recon_t),
            None => (xs, xt),
        };
        let l_g = pass.as_ref().map_or(0.0, |p| p.guidance);

        let fe = &self.dann.features;
        let fwd_s = rs.iter().map(|w| fe.forward(w)).collect::<Result<Vec<_>>>()?;
        let probs: Vec<Vec<f64>> = fwd_s
            .iter()
            .map(|(f, _)| classify(f, &self.dann.classifier))
            .collect::<Result<_>>()?;
        let l_c = classification_loss(&probs, ys)?;

        let disc = &self.dann.discriminator;
        let (fwd_t, ds, dt, l_d) = if adversarial {
            let fwd_t = rt.iter().map(|w| fe.forward(w)).collect::<Result<Vec<_>>>()?;
            let ds: Vec<_> = fwd_s.iter().map(|(f, _)| disc.forward(f)).collect();
            let dt: Vec<_> = fwd_t.iter().map(|(f, _)| disc.forward(f)).collect();
            let ps: Vec<f64> = ds.iter().map(|(z, _)| sigmoid(*z)).collect();
            let pt: Vec<f64> = dt.iter().map(|(z, _)| sigmoid(*z)).collect();
            let l_d = domain_loss(&ps, &pt);
            (fwd_t, ds, dt, l_d)
        } else {
            (Vec::new(), Vec::new(), Vec::new(), 0.0)
        };
        let losses = StepLosses { l_c, l_d, l_g }.check()?;

        let Some((grads, mode)) = back.as_mut() else {
            return Ok(losses);
        };
        let grl = GradReverse { lambda };
        let need_s = self.filter.path(Domain::Source).is_some_and(|p| p.learnable);
        let need_t = self.filter.path(Domain::Target).is_some_and(|p| p.learnable);
        let disc_scale = match mode {
            GradMode::Train => 1.0,
            GradMode::Objective => -lambda,
        };

        let g_logits = classification_grad(&probs, ys);
        let (gz_s, gz_t) = if adversarial {
            let ps: Vec<f64> = ds.iter().map(|(z, _)| sigmoid(*z)).collect();
            let pt: Vec<f64> = dt.iter().map(|(z, _)| sigmoid(*z)).collect();
            domain_grad(&ps, &pt)
        } else {
            (Vec::new(), Vec::new())
        };

        let mut grad_rs = Vec::with_capacity(if need_s { xs.len() } else { 0 });
        for (i, (f, tape)) in fwd_s.iter().enumerate() {
            let mut gf = self
                .dann
                .classifier
                .backward(f, &g_logits[i], &mut grads.dann.classifier);
            if adversarial {
                let gd = disc_backward(self, &ds[i].1, gz_s[i], disc_scale, grads);
                for (a, b) in gf.iter_mut().zip(grl.backward(&gd)) {
                    *a += b;
                }
            }
            if let Some(gx) = fe.backward(tape, &gf, &mut grads.dann.features, need_s) {
                grad_rs.push(gx);
            }
        }
        let mut grad_rt = Vec::with_capacity(if need_t { xt.len() } else { 0 });
        for (i, (_, tape)) in fwd_t.iter().enumerate() {
            let gd = disc_backward(self, &dt[i].1, gz_t[i], disc_scale, grads);
            let gf = grl.backward(&gd);
            if let Some(gx) = fe.backward(tape, &gf, &mut grads.dann.features, need_t) {
                grad_rt.push(gx);
            }
        }
        if let Some(p) = &pass {
            filter_backward(p, &self.filter, &grad_rs, &grad_rt, mu, &mut grads.filter)?;
        }
        Ok(losses)
    }
}

/// Discriminator backward for one sample. The discriminator's own gradient
/// is scaled by `disc_scale`; the returned feature gradient is `∂L_D/∂f`.
fn disc_backward(
    model: &Model,
    tape: &crate::adversarial::DiscTape,
    grad_logit: f64,
    disc_scale: f64,
    grads: &mut Model,
) -> Vec<f64> {
    let disc = &model.dann.discriminator;
    if disc_scale == 1.0 {
        return disc.backward(tape, grad_logit, &mut grads.dann.discriminator);
    }
    // Scale the parameter gradient only; the feature gradient stays unscaled.
    let mut scratch = crate::adversarial::Discriminator::zeros();
    let gf = disc.backward(tape, grad_logit, &mut scratch);
    let acc = |dst: &mut [f64], src: &[f64]| {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += disc_scale * s;
        }
    };
    let g = &mut grads.dann.discriminator;
    acc(&mut g.hidden.weight, &scratch.hidden.weight);
    acc(&mut g.hidden.bias, &scratch.hidden.bias);
    acc(&mut g.out.weight, &scratch.out.weight);
    acc(&mut g.out.bias, &scratch.out.bias);
    gf
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

impl Parameterized for Model {
    fn visit(&self, f: &mut dyn FnMut(&str, Group, &[f64])) {
        self.filter.visit(f);
        self.dann.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, Group, &mut [f64])) {
        self.filter.visit_mut(f);
        self.dann.visit_mut(f);
    }
}
