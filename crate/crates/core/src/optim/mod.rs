//! Parameter bookkeeping, Adam, the step learning-rate schedule and the
//! composite objective.

mod checkpoint;
mod gradcheck;

pub use checkpoint::Checkpoint;
pub use gradcheck::{finite_diff_check, GradCheckReport};

use std::fmt;

use crate::{Error, Result};

/// Named parameter groups of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    /// Learnable filter instances (`θ_S`).
    Filter,
    /// Convolutional feature extractor (`θ_F`).
    Features,
    /// Classifier head (`θ_C`).
    Classifier,
    /// Domain discriminator head (`θ_D`).
    Discriminator,
}

impl Group {
    pub const ALL: [Group; 4] = [
        Group::Filter,
        Group::Features,
        Group::Classifier,
        Group::Discriminator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::Filter => "theta_s",
            Group::Features => "theta_f",
            Group::Classifier => "theta_c",
            Group::Discriminator => "theta_d",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Anything holding learnable tensors. Both visitors must walk the same
/// tensors in the same order; frozen tensors are not visited.
pub trait Parameterized {
    fn visit(&self, f: &mut dyn FnMut(&str, Group, &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, Group, &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, t| n += t.len());
        n
    }
}

/// All learnable scalars in visiting order.
pub fn flatten<P: Parameterized + ?Sized>(p: &P) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.num_params());
    p.visit(&mut |_, _, t| out.extend_from_slice(t));
    out
}

/// Overwrites all learnable scalars from `values` (visiting order).
pub fn unflatten<P: Parameterized + ?Sized>(p: &mut P, values: &[f64]) -> Result<()> {
    let expected = p.num_params();
    if values.len() != expected {
        return Err(Error::Shape(format!(
            "{} values for {expected} parameters",
            values.len()
        )));
    }
    let mut off = 0;
    p.visit_mut(&mut |_, _, t| {
        t.copy_from_slice(&values[off..off + t.len()]);
        off += t.len();
    });
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub group: Group,
    pub offset: usize,
    pub len: usize,
}

/// Gradient and Adam moment buffers for every learnable tensor of a model.
/// The values themselves stay in the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRegistry {
    entries: Vec<ParamEntry>,
    grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    adam: AdamConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParamRegistry {
    pub fn new<P: Parameterized + ?Sized>(model: &P) -> Self {
        let mut entries = Vec::new();
        let mut off = 0;
        model.visit(&mut |name, group, t| {
            entries.push(ParamEntry {
                name: name.to_string(),
                group,
                offset: off,
                len: t.len(),
            });
            off += t.len();
        });
        Self {
            entries,
            grad: vec![0.0; off],
            m: vec![0.0; off],
            v: vec![0.0; off],
            step: 0,
            adam: AdamConfig::default(),
        }
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.grad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad.is_empty()
    }

    pub fn groups(&self) -> Vec<Group> {
        let mut g: Vec<Group> = self.entries.iter().map(|e| e.group).collect();
        g.sort();
        g.dedup();
        g
    }

    pub fn grads(&self) -> &[f64] {
        &self.grad
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn zero_grads(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Copies gradients from a model-shaped gradient holder.
    pub fn load_grads<P: Parameterized + ?Sized>(&mut self, grads: &P) -> Result<()> {
        let flat = flatten(grads);
        if flat.len() != self.grad.len() {
            return Err(Error::Shape(format!(
                "gradient holder has {} scalars, registry {}",
                flat.len(),
                self.grad.len()
            )));
        }
        self.grad.copy_from_slice(&flat);
        Ok(())
    }

    /// One bias-corrected Adam update of `model` with the stored gradients.
    pub fn adam_step<P: Parameterized + ?Sized>(&mut self, model: &mut P, lr: f64) -> Result<()> {
        if model.num_params() != self.grad.len() {
            return Err(Error::Shape("model does not match registry".into()));
        }
        let AdamConfig { beta1, beta2, eps } = self.adam;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut off = 0;
        let (grad, m, v) = (&self.grad, &mut self.m, &mut self.v);
        model.visit_mut(&mut |_, _, t| {
            for (i, p) in t.iter_mut().enumerate() {
                let j = off + i;
                let g = grad[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
            off += t.len();
        });
        Ok(())
    }
}

/// Step schedule: `base_lr` multiplied by each milestone factor once the
/// epoch reaches it.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    /// `(epoch, factor)`, sorted by epoch.
    pub milestones: Vec<(usize, f64)>,
    pub total_epochs: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            base_lr: 0.001,
            milestones: vec![(150, 0.1), (250, 0.1)],
            total_epochs: 300,
        }
    }
}

impl Schedule {
    /// Milestones at the same fractions of training (1/2 and 5/6) as the
    /// 300-epoch default.
    pub fn scaled(base_lr: f64, total_epochs: usize) -> Self {
        Self {
            base_lr,
            milestones: vec![(total_epochs / 2, 0.1), (total_epochs * 5 / 6, 0.1)],
            total_epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.milestones.windows(2).any(|w| w[0].0 > w[1].0) {
            return Err(Error::Config("milestones must be sorted".into()));
        }
        if self.milestones.iter().any(|(_, f)| !(*f > 0.0)) {
            return Err(Error::Config("milestone factors must be positive".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::Range(format!(
                "epoch {epoch} outside [0, {})",
                self.total_epochs
            )));
        }
        let mut lr = self.base_lr;
        for &(at, factor) in &self.milestones {
            if epoch >= at {
                lr *= factor;
            }
        }
        Ok(lr)
    }
}

/// `L = L_C - λ·L_D + μ·L_G`.
pub fn total_loss(l_c: f64, l_d: f64, l_g: f64, lambda: f64, mu: f64) -> f64 {
    l_c - lambda * l_d + mu * l_g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug, PartialEq)]
    pub(crate) struct Toy {
        pub a: Vec<f64>,
        pub b: Vec<f64>,
    }

    impl Parameterized for Toy {
        fn visit(&self, f: &mut dyn FnMut(&str, Group, &[f64])) {
            f("a", Group::Features, &self.a);
            f("b", Group::Classifier, &self.b);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, Group, &mut [f64])) {
            f("a", Group::Features, &mut self.a);
            f("b", Group::Classifier, &mut self.b);
        }
    }

    #[test]
    fn objective_arithmetic() {
        assert_eq!(total_loss(0.7, 0.4, 0.3, 0.0, 0.0), 0.7);
        assert!((total_loss(1.0, 0.5, 0.2, 1.0, 2.0) - 0.9).abs() < 1e-15);
        assert_eq!(total_loss(0.7, 0.4, 0.0, 0.5, 3.0), 0.7 - 0.2);
    }

    #[test]
    fn schedule_plateaus() {
        let s = Schedule::default();
        assert_eq!(s.lr_at(0).unwrap(), 0.001);
        assert_eq!(s.lr_at(149).unwrap(), 0.001);
        assert_eq!(s.lr_at(150).unwrap(), 0.0001);
        assert_eq!(s.lr_at(249).unwrap(), 0.0001);
        assert_eq!(s.lr_at(250).unwrap(), 0.00001);
        assert_eq!(s.lr_at(299).unwrap(), 0.00001);
        assert!(matches!(s.lr_at(300), Err(Error::Range(_))));
        assert_eq!(Schedule::scaled(0.001, 300), s);
        assert_eq!(Schedule::scaled(0.001, 60).milestones, vec![(30, 0.1), (50, 0.1)]);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut toy = Toy { a: vec![1.0, -2.0], b: vec![0.5] };
        let before = toy.clone();
        let mut reg = ParamRegistry::new(&toy);
        reg.adam_step(&mut toy, 0.01).unwrap();
        assert_eq!(toy, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut toy = Toy { a: vec![1.0, -2.0], b: vec![0.5] };
        let mut reg = ParamRegistry::new(&toy);
        reg.grads_mut().copy_from_slice(&[3.0, -0.02, 1e-3]);
        reg.adam_step(&mut toy, 0.01).unwrap();
        assert!((toy.a[0] - (1.0 - 0.01)).abs() < 1e-6);
        assert!((toy.a[1] - (-2.0 + 0.01)).abs() < 1e-6);
        assert!((toy.b[0] - (0.5 - 0.01)).abs() < 1e-6);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut toy = Toy { a: vec![0.3, 0.1], b: vec![-0.7] };
            let mut reg = ParamRegistry::new(&toy);
            for i in 0..25 {
                let g = [toy.a[0] * 2.0, (i as f64).sin(), toy.b[0] - 1.0];
                reg.grads_mut().copy_from_slice(&g);
                reg.adam_step(&mut toy, 0.05).unwrap();
            }
            toy
        };
        let (x, y) = (run(), run());
        assert_eq!(flatten(&x).iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   flatten(&y).iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn zero_grads_keeps_moments() {
        let mut toy = Toy { a: vec![1.0], b: vec![2.0] };
        let mut reg = ParamRegistry::new(&toy);
        reg.grads_mut().copy_from_slice(&[0.5, -0.5]);
        reg.adam_step(&mut toy, 0.1).unwrap();
        let (m, v) = (reg.first_moment().to_vec(), reg.second_moment().to_vec());
        reg.zero_grads();
        assert!(reg.grads().iter().all(|g| *g == 0.0));
        reg.zero_grads();
        assert!(reg.grads().iter().all(|g| *g == 0.0));
        assert_eq!(reg.first_moment(), &m[..]);
        assert_eq!(reg.second_moment(), &v[..]);
    }

    #[test]
    fn registry_layout() {
        let toy = Toy { a: vec![0.0; 3], b: vec![0.0; 2] };
        let reg = ParamRegistry::new(&toy);
        assert_eq!(reg.len(), 5);
        assert_eq!(reg.entries()[1].offset, 3);
        assert_eq!(reg.groups(), vec![Group::Features, Group::Classifier]);
        let mut t2 = toy.clone();
        unflatten(&mut t2, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(t2.b, vec![4.0, 5.0]);
        assert!(unflatten(&mut t2, &[1.0]).is_err());
    }
}
