//! The smart filter: a frozen WPT and a learnable LWPT, each applied to one
//! domain, tied together by the guidance loss
//!
//! ```text
//! L_G = (1/2^L) Σ_j (E_s[j] - E_t[j])²,   E_d[j] = mean_{i,k} |c_{i,j,k}|
//! ```
//!
//! Both instances use the same natural band order, so band `j` means the
//! same frequency range on either side.

use crate::optim::{Group, Parameterized};
use crate::signal::Domain;
use crate::wavelet::{
    decode_backward, decode_with_tape, encode_backward, encode_with_tape, wpt_decode, wpt_encode,
    CoeffGrid, DecodeTape, EncodeTape, FilterParams, Wavelet,
};
use crate::{Error, Result};

/// Which domain goes through a learnable transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Source through the frozen WPT, target through the LWPT.
    TargetToLwpt,
    /// Source through the LWPT, target through the frozen WPT.
    SourceToLwpt,
    /// Each domain through its own LWPT.
    BothLwpt,
    /// No filtering at all.
    None,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::TargetToLwpt => "target_to_lwpt",
            Strategy::SourceToLwpt => "source_to_lwpt",
            Strategy::BothLwpt => "both_lwpt",
            Strategy::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "target_to_lwpt" | "t2lwpt" | "t->lwpt" => Some(Strategy::TargetToLwpt),
            "source_to_lwpt" | "s2lwpt" | "s->lwpt" => Some(Strategy::SourceToLwpt),
            "both_lwpt" | "both" => Some(Strategy::BothLwpt),
            "none" => Some(Strategy::None),
            _ => None,
        }
    }
}

/// The filter instances demanded by a strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRouting {
    pub strategy: Strategy,
    pub wpt: FilterParams,
    pub lwpt: Option<FilterParams>,
    /// Second, independent LWPT (target side of [`Strategy::BothLwpt`]).
    pub lwpt2: Option<FilterParams>,
}

impl FilterRouting {
    pub fn new(strategy: Strategy, wavelet: Wavelet, levels: usize) -> Self {
        let lwpt = match strategy {
            Strategy::None => None,
            _ => Some(FilterParams::lwpt(wavelet, levels)),
        };
        let lwpt2 = match strategy {
            Strategy::BothLwpt => Some(FilterParams::lwpt(wavelet, levels)),
            _ => None,
        };
        Self {
            strategy,
            wpt: FilterParams::wpt(wavelet, levels),
            lwpt,
            lwpt2,
        }
    }

    pub fn levels(&self) -> usize {
        self.wpt.levels()
    }

    /// Same structure with every learnable scalar zero; used as a gradient holder.
    pub fn zeros_like(&self) -> Self {
        Self {
            strategy: self.strategy,
            wpt: self.wpt.clone(),
            lwpt: self.lwpt.as_ref().map(FilterParams::zeros_like),
            lwpt2: self.lwpt2.as_ref().map(FilterParams::zeros_like),
        }
    }

    /// Transform applied to `domain`, or `None` when the domain is passed through raw.
    pub fn path(&self, domain: Domain) -> Option<&FilterParams> {
        match (self.strategy, domain) {
            (Strategy::None, _) => None,
            (Strategy::TargetToLwpt, Domain::Source) => Some(&self.wpt),
            (Strategy::TargetToLwpt, Domain::Target) => self.lwpt.as_ref(),
            (Strategy::SourceToLwpt, Domain::Source) => self.lwpt.as_ref(),
            (Strategy::SourceToLwpt, Domain::Target) => Some(&self.wpt),
            (Strategy::BothLwpt, Domain::Source) => self.lwpt.as_ref(),
            (Strategy::BothLwpt, Domain::Target) => self.lwpt2.as_ref(),
        }
    }

    fn path_mut(&mut self, domain: Domain) -> Option<&mut FilterParams> {
        match (self.strategy, domain) {
            (Strategy::None, _) => None,
            (Strategy::TargetToLwpt, Domain::Source) | (Strategy::SourceToLwpt, Domain::Target) => {
                Some(&mut self.wpt)
            }
            (Strategy::TargetToLwpt, Domain::Target)
            | (Strategy::SourceToLwpt, Domain::Source)
            | (Strategy::BothLwpt, Domain::Source) => self.lwpt.as_mut(),
            (Strategy::BothLwpt, Domain::Target) => self.lwpt2.as_mut(),
        }
    }

    /// Filters windows of a single domain (inference path).
    pub fn apply(&self, windows: &[Vec<f64>], domain: Domain) -> Result<Vec<Vec<f64>>> {
        match self.path(domain) {
            None => Ok(windows.to_vec()),
            Some(p) => windows
                .iter()
                .map(|w| wpt_encode(w, p).and_then(|g| wpt_decode(&g, p)))
                .collect(),
        }
    }
}

fn visit_filter(
    prefix: &str,
    p: &FilterParams,
    f: &mut dyn FnMut(&str, Group, &[f64]),
) {
    for (l, k) in p.kernels.iter().enumerate() {
        f(&format!("{prefix}.kernel.{l}"), Group::Filter, k);
    }
    for (l, b) in p.biases.iter().enumerate() {
        f(&format!("{prefix}.bias.{l}"), Group::Filter, b);
    }
}

fn visit_filter_mut(
    prefix: &str,
    p: &mut FilterParams,
    f: &mut dyn FnMut(&str, Group, &mut [f64]),
) {
    for (l, k) in p.kernels.iter_mut().enumerate() {
        f(&format!("{prefix}.kernel.{l}"), Group::Filter, k);
    }
    for (l, b) in p.biases.iter_mut().enumerate() {
        f(&format!("{prefix}.bias.{l}"), Group::Filter, b);
    }
}

impl Parameterized for FilterRouting {
    fn visit(&self, f: &mut dyn FnMut(&str, Group, &[f64])) {
        if let Some(p) = &self.lwpt {
            visit_filter("lwpt", p, f);
        }
        if let Some(p) = &self.lwpt2 {
            visit_filter("lwpt2", p, f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, Group, &mut [f64])) {
        if let Some(p) = &mut self.lwpt {
            visit_filter_mut("lwpt", p, f);
        }
        if let Some(p) = &mut self.lwpt2 {
            visit_filter_mut("lwpt2", p, f);
        }
    }
}

fn check_batch(grids: &[CoeffGrid], other: &[CoeffGrid]) -> Result<()> {
    if grids.is_empty() || grids.len() != other.len() {
        return Err(Error::Shape(format!(
            "guidance needs equal non-empty batches, got {} and {}",
            grids.len(),
            other.len()
        )));
    }
    let first = &grids[0];
    if let Some(bad) = grids.iter().chain(other).find(|g| !g.same_shape(first)) {
        return Err(Error::Shape(format!(
            "grid {}x{} does not match {}x{}",
            bad.bands(),
            bad.len(),
            first.bands(),
            first.len()
        )));
    }
    Ok(())
}

/// Mean absolute coefficient per band over a batch.
pub fn band_expectations(grids: &[CoeffGrid]) -> Vec<f64> {
    let Some(first) = grids.first() else {
        return Vec::new();
    };
    let scale = 1.0 / (grids.len() * first.len()) as f64;
    (0..first.bands())
        .map(|j| {
            grids
                .iter()
                .map(|g| g.band(j).iter().map(|c| c.abs()).sum::<f64>())
                .sum::<f64>()
                * scale
        })
        .collect()
}

pub fn guidance_loss(grid_s: &[CoeffGrid], grid_t: &[CoeffGrid]) -> Result<f64> {
    check_batch(grid_s, grid_t)?;
    let es = band_expectations(grid_s);
    let et = band_expectations(grid_t);
    let bands = es.len() as f64;
    Ok(es.iter().zip(&et).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / bands)
}

/// `∂L_G/∂c` for every coefficient of both batches; `∂|c|/∂c` is taken as
/// 0 at `c = 0`.
pub fn guidance_grad(
    grid_s: &[CoeffGrid],
    grid_t: &[CoeffGrid],
) -> Result<(Vec<CoeffGrid>, Vec<CoeffGrid>)> {
    check_batch(grid_s, grid_t)?;
    let es = band_expectations(grid_s);
    let et = band_expectations(grid_t);
    let first = &grid_s[0];
    let (bands, k) = (first.bands(), first.len());
    let coef: Vec<f64> = es
        .iter()
        .zip(&et)
        .map(|(a, b)| 2.0 * (a - b) / (bands as f64 * (grid_s.len() * k) as f64))
        .collect();
    let sign = |c: f64| {
        if c > 0.0 {
            1.0
        } else if c < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let side = |grids: &[CoeffGrid], dir: f64| -> Vec<CoeffGrid> {
        grids
            .iter()
            .map(|g| {
                let mut out = CoeffGrid::zeros(bands, k);
                for j in 0..bands {
                    for (o, c) in out.band_mut(j).iter_mut().zip(g.band(j)) {
                        *o = dir * coef[j] * sign(*c);
                    }
                }
                out
            })
            .collect()
    };
    Ok((side(grid_s, 1.0), side(grid_t, -1.0)))
}

struct SideTape {
    grids: Vec<CoeffGrid>,
    encode: Vec<EncodeTape>,
    decode: Vec<DecodeTape>,
}

/// Forward results of [`filter_batch`], kept for the backward pass.
pub struct FilterPass {
    pub recon_s: Vec<Vec<f64>>,
    pub recon_t: Vec<Vec<f64>>,
    pub guidance: f64,
    source: Option<SideTape>,
    target: Option<SideTape>,
}

impl FilterPass {
    pub fn grids(&self, domain: Domain) -> Option<&[CoeffGrid]> {
        let side = match domain {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        };
        side.as_ref().map(|s| s.grids.as_slice())
    }
}

fn run_side(windows: &[Vec<f64>], params: &FilterParams) -> Result<(Vec<Vec<f64>>, SideTape)> {
    let mut recon = Vec::with_capacity(windows.len());
    let mut tape = SideTape {
        grids: Vec::with_capacity(windows.len()),
        encode: Vec::with_capacity(windows.len()),
        decode: Vec::with_capacity(windows.len()),
    };
    for w in windows {
        let (grid, et) = encode_with_tape(w, params)?;
        let (x, dt) = decode_with_tape(&grid, params)?;
        recon.push(x);
        tape.grids.push(grid);
        tape.encode.push(et);
        tape.decode.push(dt);
    }
    Ok((recon, tape))
}

/// Encodes/decodes each domain along its routed path and evaluates the
/// guidance loss between the two coefficient batches.
pub fn filter_batch(
    batch_s: &[Vec<f64>],
    batch_t: &[Vec<f64>],
    routing: &FilterRouting,
) -> Result<FilterPass> {
    let w = batch_s.first().or(batch_t.first()).map_or(0, Vec::len);
    if batch_s.iter().chain(batch_t).any(|x| x.len() != w) {
        return Err(Error::Shape("batch windows differ in length".into()));
    }
    let (Some(ps), Some(pt)) = (routing.path(Domain::Source), routing.path(Domain::Target)) else {
        return Ok(FilterPass {
            recon_s: batch_s.to_vec(),
            recon_t: batch_t.to_vec(),
            guidance: 0.0,
            source: None,
            target: None,
        });
    };
    let (recon_s, ts) = run_side(batch_s, ps)?;
    let (recon_t, tt) = run_side(batch_t, pt)?;
    let guidance = guidance_loss(&ts.grids, &tt.grids)?;
    Ok(FilterPass {
        recon_s,
        recon_t,
        guidance,
        source: Some(ts),
        target: Some(tt),
    })
}

/// Backward pass of [`filter_batch`] for the loss
/// `f(recon_s, recon_t) + mu·L_G`, given `∂f/∂recon`. Gradients accumulate
/// into the learnable instances of `grads` (shaped like `routing`).
pub fn filter_backward(
    pass: &FilterPass,
    routing: &FilterRouting,
    grad_recon_s: &[Vec<f64>],
    grad_recon_t: &[Vec<f64>],
    mu: f64,
    grads: &mut FilterRouting,
) -> Result<()> {
    let (Some(ts), Some(tt)) = (&pass.source, &pass.target) else {
        return Ok(());
    };
    let (gg_s, gg_t) = if mu != 0.0 {
        let (a, b) = guidance_grad(&ts.grids, &tt.grids)?;
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    for (domain, tape, up, gguide) in [
        (Domain::Source, ts, grad_recon_s, gg_s),
        (Domain::Target, tt, grad_recon_t, gg_t),
    ] {
        let params = routing.path(domain).expect("tape implies a path");
        if !params.learnable {
            continue;
        }
        let pg = grads
            .path_mut(domain)
            .ok_or_else(|| Error::Shape("gradient holder lacks a filter instance".into()))?;
        for i in 0..tape.grids.len() {
            let mut ggrid = decode_backward(&tape.decode[i], params, &up[i], Some(pg));
            if let Some(gg) = &gguide {
                for (a, b) in ggrid.as_mut_slice().iter_mut().zip(gg[i].as_slice()) {
                    *a += mu * b;
                }
            }
            encode_backward(&tape.encode[i], params, &ggrid, Some(pg));
        }
    }
    Ok(())
}
