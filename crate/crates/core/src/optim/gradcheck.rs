use std::collections::BTreeMap;

use super::{flatten, Group, Parameterized};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Maximum relative error per group that has learnable scalars.
    pub per_group: BTreeMap<Group, f64>,
    pub max_rel_error: f64,
    /// Tensor name and element index of the worst scalar.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares `analytic` (shaped like `model`) against central differences of
/// `objective` for every learnable scalar. Relative error uses the
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<M, F>(model: &M, analytic: &M, objective: F, eps: f64) -> GradCheckReport
where
    M: Parameterized + Clone,
    F: Fn(&M) -> f64,
{
    let grads = flatten(analytic);
    let mut names = Vec::new();
    model.visit(&mut |name, group, t| names.push((name.to_string(), group, t.len())));

    let mut probe = model.clone();
    let mut per_group = BTreeMap::new();
    let mut max_rel_error: f64 = 0.0;
    let mut worst = None;
    let mut flat_idx = 0;
    for (t_idx, (name, group, len)) in names.iter().enumerate() {
        let entry = per_group.entry(*group).or_insert(0.0_f64);
        for i in 0..*len {
            let orig = scalar(&probe, t_idx, i);
            set_scalar(&mut probe, t_idx, i, orig + eps);
            let plus = objective(&probe);
            set_scalar(&mut probe, t_idx, i, orig - eps);
            let minus = objective(&probe);
            set_scalar(&mut probe, t_idx, i, orig);

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grads[flat_idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > *entry {
                *entry = rel;
            }
            if rel > max_rel_error || worst.is_none() {
                max_rel_error = rel;
                worst = Some((name.clone(), i));
            }
            flat_idx += 1;
        }
    }
    GradCheckReport {
        per_group,
        max_rel_error,
        worst,
        checked: flat_idx,
    }
}

fn scalar<M: Parameterized>(m: &M, tensor: usize, i: usize) -> f64 {
    let mut k = 0;
    let mut out = 0.0;
    m.visit(&mut |_, _, t| {
        if k == tensor {
            out = t[i];
        }
        k += 1;
    });
    out
}

fn set_scalar<M: Parameterized>(m: &mut M, tensor: usize, i: usize, v: f64) {
    let mut k = 0;
    m.visit_mut(&mut |_, _, t| {
        if k == tensor {
            t[i] = v;
        }
        k += 1;
    });
}
