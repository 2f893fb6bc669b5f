//! Wavelet packet cascade with circular boundaries.
//!
//! Every stage splits each current band into a low-pass and a high-pass
//! child (kept in that order, so bands stay in natural/Paley order) and
//! downsamples by two. A stage's data always fits in one flat buffer of the
//! window length: band `j` of a stage with `n`-sample bands lives at
//! `[j*n, (j+1)*n)` and is replaced by `[low child | high child]`.
//!
//! Analysis is `a[k] = sum_m h[m] x[(2k+m) mod n]`; synthesis is its exact
//! adjoint, so with an orthonormal kernel decoding inverts encoding.
//!
//! The learnable variant (LWPT) shares one low-pass kernel per layer (the
//! high-pass is its quadrature mirror) and passes every stage output through
//! the hard-threshold activation [`ht`]. Decoding never thresholds.

use crate::{Error, Result};

/// Slope of both sigmoids inside [`ht`].
pub const HT_SLOPE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wavelet {
    /// Daubechies with four vanishing moments (8 taps).
    Db4,
    Haar,
}

impl Wavelet {
    pub fn lowpass(self) -> Vec<f64> {
        match self {
            Wavelet::Db4 => vec![
                0.230_377_813_308_855_23,
                0.714_846_570_552_541_5,
                0.630_880_767_929_590_4,
                -0.027_983_769_416_983_85,
                -0.187_034_811_718_881_14,
                0.030_841_381_835_986_965,
                0.032_883_011_666_982_945,
                -0.010_597_401_784_997_278,
            ],
            Wavelet::Haar => vec![std::f64::consts::FRAC_1_SQRT_2; 2],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Wavelet::Db4 => "db4",
            Wavelet::Haar => "haar",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "db4" => Some(Wavelet::Db4),
            "haar" => Some(Wavelet::Haar),
            _ => None,
        }
    }
}

/// `g[n] = (-1)^n h[M-1-n]`.
pub fn qmf_highpass(h: &[f64]) -> Vec<f64> {
    let m = h.len();
    (0..m)
        .map(|n| if n % 2 == 0 { h[m - 1 - n] } else { -h[m - 1 - n] })
        .collect()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Hard-threshold activation `x·[σ(-10(x+b)) + σ(10(x-b))]`.
///
/// Evaluated as `x·(1 + σ(10(|x|-b)) - σ(10(|x|+b)))`, which is the same
/// function written so that `b = 0` gives `x` exactly and oddness in `x` is
/// exact.
#[inline]
pub fn ht(x: f64, b: f64) -> f64 {
    let a = x.abs();
    x * (1.0 + (sigmoid(HT_SLOPE * (a - b)) - sigmoid(HT_SLOPE * (a + b))))
}

/// Partial derivatives `(d ht/dx, d ht/db)`.
#[inline]
pub fn ht_grad(x: f64, b: f64) -> (f64, f64) {
    let a = x.abs();
    let s1 = sigmoid(HT_SLOPE * (a - b));
    let s2 = sigmoid(HT_SLOPE * (a + b));
    let d1 = s1 * (1.0 - s1);
    let d2 = s2 * (1.0 - s2);
    let gain = 1.0 + (s1 - s2);
    let dx = gain + a * HT_SLOPE * (d1 - d2);
    let db = -x * HT_SLOPE * (d1 + d2);
    (dx, db)
}

/// Wavelet packet coefficients of one window: `bands` rows of `len` positions.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffGrid {
    bands: usize,
    len: usize,
    data: Vec<f64>,
}

impl CoeffGrid {
    pub fn new(bands: usize, len: usize, data: Vec<f64>) -> Result<Self> {
        if !bands.is_power_of_two() || data.len() != bands * len {
            return Err(Error::Shape(format!(
                "grid of {bands} bands x {len} positions cannot hold {} values",
                data.len()
            )));
        }
        Ok(Self { bands, len, data })
    }

    pub fn zeros(bands: usize, len: usize) -> Self {
        Self {
            bands,
            len,
            data: vec![0.0; bands * len],
        }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// Positions per band (`K`).
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn levels(&self) -> usize {
        self.bands.trailing_zeros() as usize
    }

    pub fn band(&self, j: usize) -> &[f64] {
        &self.data[j * self.len..(j + 1) * self.len]
    }

    pub fn band_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.len..(j + 1) * self.len]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c * c).sum()
    }

    pub fn same_shape(&self, other: &CoeffGrid) -> bool {
        self.bands == other.bands && self.len == other.len
    }
}

/// Kernels and thresholds of one WPT/LWPT instance.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams {
    /// Low-pass kernel per layer.
    pub kernels: Vec<Vec<f64>>,
    /// HT bias per layer and output band; layer `l` (0-based) has `2^(l+1)`.
    pub biases: Vec<Vec<f64>>,
    pub learnable: bool,
}

impl FilterParams {
    /// Frozen transform: reference kernels, no thresholding.
    pub fn wpt(wavelet: Wavelet, levels: usize) -> Self {
        Self::build(wavelet, levels, false)
    }

    /// Learnable transform initialized to the frozen one (zero biases).
    pub fn lwpt(wavelet: Wavelet, levels: usize) -> Self {
        Self::build(wavelet, levels, true)
    }

    fn build(wavelet: Wavelet, levels: usize, learnable: bool) -> Self {
        let h = wavelet.lowpass();
        Self {
            kernels: vec![h; levels],
            biases: (0..levels).map(|l| vec![0.0; 2 << l]).collect(),
            learnable,
        }
    }

    pub fn levels(&self) -> usize {
        self.kernels.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            kernels: self.kernels.iter().map(|k| vec![0.0; k.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            learnable: self.learnable,
        }
    }

    pub fn num_learnable(&self) -> usize {
        if !self.learnable {
            return 0;
        }
        self.kernels.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    fn check_window(&self, w: usize) -> Result<()> {
        let bands = 1usize << self.levels();
        if w == 0 || w % bands != 0 {
            return Err(Error::Shape(format!(
                "window length {w} not divisible by 2^{} = {bands}",
                self.levels()
            )));
        }
        Ok(())
    }
}

fn analysis_block(x: &[f64], h: &[f64], g: &[f64], out: &mut [f64]) {
    let n = x.len();
    let half = n / 2;
    let (lo, hi) = out.split_at_mut(half);
    for k in 0..half {
        let (mut a, mut d) = (0.0, 0.0);
        for (m, (hm, gm)) in h.iter().zip(g).enumerate() {
            let v = x[(2 * k + m) % n];
            a += hm * v;
            d += gm * v;
        }
        lo[k] = a;
        hi[k] = d;
    }
}

/// Adjoint of [`analysis_block`]; accumulates into `y`.
fn synthesis_block(a: &[f64], h: &[f64], g: &[f64], y: &mut [f64]) {
    let n = a.len();
    let half = n / 2;
    let (lo, hi) = a.split_at(half);
    for k in 0..half {
        for (m, (hm, gm)) in h.iter().zip(g).enumerate() {
            y[(2 * k + m) % n] += hm * lo[k] + gm * hi[k];
        }
    }
}

/// `dL/dh` and `dL/dg` of `out = analysis(x)` (equivalently of
/// `x = synthesis(out)` with roles of signal and upstream swapped).
fn kernel_grad_block(x: &[f64], up: &[f64], dh: &mut [f64], dg: &mut [f64]) {
    let n = x.len();
    let half = n / 2;
    let (ulo, uhi) = up.split_at(half);
    for k in 0..half {
        for m in 0..dh.len() {
            let v = x[(2 * k + m) % n];
            dh[m] += ulo[k] * v;
            dg[m] += uhi[k] * v;
        }
    }
}

/// Folds a high-pass gradient into the shared low-pass kernel gradient.
fn fold_qmf_grad(dg: &[f64], dh: &mut [f64]) {
    let m = dh.len();
    for (n, v) in dg.iter().enumerate() {
        if n % 2 == 0 {
            dh[m - 1 - n] += v;
        } else {
            dh[m - 1 - n] -= v;
        }
    }
}

/// Intermediates of one encode pass.
#[derive(Debug, Clone)]
pub struct EncodeTape {
    /// Input buffer of every stage.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of every stage (learnable only).
    pre_act: Vec<Vec<f64>>,
}

/// Intermediates of one decode pass.
#[derive(Debug, Clone)]
pub struct DecodeTape {
    /// Input buffer of every stage, deepest stage first.
    inputs: Vec<Vec<f64>>,
}

pub fn wpt_encode(window: &[f64], params: &FilterParams) -> Result<CoeffGrid> {
    encode_with_tape(window, params).map(|(g, _)| g)
}

pub fn encode_with_tape(window: &[f64], params: &FilterParams) -> Result<(CoeffGrid, EncodeTape)> {
    let w = window.len();
    params.check_window(w)?;
    let levels = params.levels();
    let mut tape = EncodeTape {
        inputs: Vec::with_capacity(levels),
        pre_act: Vec::new(),
    };
    let mut cur = window.to_vec();
    for s in 0..levels {
        let h = &params.kernels[s];
        let g = qmf_highpass(h);
        let n = w >> s;
        let mut out = vec![0.0; w];
        for (xb, ob) in cur.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            analysis_block(xb, h, &g, ob);
        }
        if params.learnable {
            tape.pre_act.push(out.clone());
            for (band, chunk) in out.chunks_exact_mut(n / 2).enumerate() {
                let b = params.biases[s][band];
                for v in chunk {
                    *v = ht(*v, b);
                }
            }
        }
        tape.inputs.push(std::mem::replace(&mut cur, out));
    }
    let grid = CoeffGrid::new(1 << levels, w >> levels, cur)?;
    Ok((grid, tape))
}

/// Backward pass of [`encode_with_tape`]. Accumulates parameter gradients
/// into `param_grads` (ignored for a frozen instance) and returns the
/// gradient with respect to the input window.
pub fn encode_backward(
    tape: &EncodeTape,
    params: &FilterParams,
    grad_grid: &CoeffGrid,
    mut param_grads: Option<&mut FilterParams>,
) -> Vec<f64> {
    let w = grad_grid.as_slice().len();
    let mut up = grad_grid.as_slice().to_vec();
    for s in (0..params.levels()).rev() {
        let n = w >> s;
        let learn = params.learnable && param_grads.is_some();
        if params.learnable {
            let pre = &tape.pre_act[s];
            for (band, (uc, pc)) in up
                .chunks_exact_mut(n / 2)
                .zip(pre.chunks_exact(n / 2))
                .enumerate()
            {
                let b = params.biases[s][band];
                let mut db_acc = 0.0;
                for (u, &p) in uc.iter_mut().zip(pc) {
                    let (dx, db) = ht_grad(p, b);
                    db_acc += *u * db;
                    *u *= dx;
                }
                if let Some(pg) = param_grads.as_deref_mut() {
                    pg.biases[s][band] += db_acc;
                }
            }
        }
        let h = &params.kernels[s];
        let g = qmf_highpass(h);
        let input = &tape.inputs[s];
        if learn {
            let pg = param_grads.as_deref_mut().unwrap();
            let mut dg = vec![0.0; g.len()];
            for (xb, ub) in input.chunks_exact(n).zip(up.chunks_exact(n)) {
                kernel_grad_block(xb, ub, &mut pg.kernels[s], &mut dg);
            }
            fold_qmf_grad(&dg, &mut pg.kernels[s]);
        }
        let mut down = vec![0.0; w];
        for (ub, db) in up.chunks_exact(n).zip(down.chunks_exact_mut(n)) {
            synthesis_block(ub, h, &g, db);
        }
        up = down;
    }
    up
}

pub fn wpt_decode(grid: &CoeffGrid, params: &FilterParams) -> Result<Vec<f64>> {
    decode_with_tape(grid, params).map(|(x, _)| x)
}

pub fn decode_with_tape(grid: &CoeffGrid, params: &FilterParams) -> Result<(Vec<f64>, DecodeTape)> {
    let levels = params.levels();
    if grid.levels() != levels || grid.bands() != 1 << levels {
        return Err(Error::Shape(format!(
            "grid has {} bands but the filter has {levels} layers",
            grid.bands()
        )));
    }
    let w = grid.as_slice().len();
    params.check_window(w)?;
    let mut tape = DecodeTape {
        inputs: Vec::with_capacity(levels),
    };
    let mut cur = grid.as_slice().to_vec();
    for s in (0..levels).rev() {
        let h = &params.kernels[s];
        let g = qmf_highpass(h);
        let n = w >> s;
        let mut out = vec![0.0; w];
        for (ab, yb) in cur.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            synthesis_block(ab, h, &g, yb);
        }
        tape.inputs.push(std::mem::replace(&mut cur, out));
    }
    Ok((cur, tape))
}

/// Backward pass of [`decode_with_tape`]: returns the gradient with respect
/// to the grid and accumulates kernel gradients for a learnable instance.
pub fn decode_backward(
    tape: &DecodeTape,
    params: &FilterParams,
    grad_window: &[f64],
    mut param_grads: Option<&mut FilterParams>,
) -> CoeffGrid {
    let levels = params.levels();
    let w = grad_window.len();
    let mut up = grad_window.to_vec();
    for s in 0..levels {
        // decode stage `s` ran at position `levels - 1 - s` of the tape
        let stage_input = &tape.inputs[levels - 1 - s];
        let h = &params.kernels[s];
        let g = qmf_highpass(h);
        let n = w >> s;
        if params.learnable {
            if let Some(pg) = param_grads.as_deref_mut() {
                let mut dg = vec![0.0; g.len()];
                for (yb, ab) in up.chunks_exact(n).zip(stage_input.chunks_exact(n)) {
                    kernel_grad_block(yb, ab, &mut pg.kernels[s], &mut dg);
                }
                fold_qmf_grad(&dg, &mut pg.kernels[s]);
            }
        }
        let mut down = vec![0.0; w];
        for (yb, ab) in up.chunks_exact(n).zip(down.chunks_exact_mut(n)) {
            analysis_block(yb, h, &g, ab);
        }
        up = down;
    }
    CoeffGrid::new(1 << levels, w >> levels, up).expect("shape preserved by the cascade")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_window(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn qmf_haar_and_db4() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let g = qmf_highpass(&[s, s]);
        assert_eq!(g, vec![s, -s]);

        let h = Wavelet::Db4.lowpass();
        let g = qmf_highpass(&h);
        let dot: f64 = h.iter().zip(&g).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-12);
        let sum: f64 = h.iter().sum();
        assert!((sum - 2f64.sqrt()).abs() < 1e-12);
        let norm: f64 = h.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn qmf_twice_is_signed_identity() {
        // g2[n] = (-1)^n g[M-1-n] = (-1)^n (-1)^(M-1-n) h[n] = (-1)^(M-1) h[n]
        let h = Wavelet::Db4.lowpass();
        let twice = qmf_highpass(&qmf_highpass(&h));
        for (a, b) in twice.iter().zip(&h) {
            assert_eq!(*a, -b);
        }
    }

    #[test]
    fn ht_values() {
        for x in [-3.0, -0.2, 0.0, 1e-9, 0.7, 42.0, 1e6] {
            assert_eq!(ht(x, 0.0), x);
        }
        for b in [-1.0, 0.0, 0.3, 5.0] {
            assert_eq!(ht(0.0, b), 0.0);
        }
        let expect = 3.0 * (1.0 / (1.0 + 40f64.exp()) + 1.0 / (1.0 + (-20f64).exp()));
        assert!((ht(3.0, 1.0) - 2.999_999_993_816_539).abs() < 1e-12);
        assert!((ht(3.0, 1.0) - expect).abs() < 1e-12);
        assert!(ht(1e6, 2.0).is_finite() && ht(-1e6, 2.0).is_finite());
    }

    #[test]
    fn ht_grad_matches_central_difference() {
        let eps = 1e-6;
        for &(x, b) in &[(0.3, 0.2), (-0.45, 0.5), (1.2, -0.1), (0.0, 0.4), (-2.0, 1.9)] {
            let (dx, db) = ht_grad(x, b);
            let nx = (ht(x + eps, b) - ht(x - eps, b)) / (2.0 * eps);
            let nb = (ht(x, b + eps) - ht(x, b - eps)) / (2.0 * eps);
            assert!((dx - nx).abs() < 1e-7, "dx {dx} vs {nx}");
            assert!((db - nb).abs() < 1e-7, "db {db} vs {nb}");
        }
    }

    #[test]
    fn haar_constant_window() {
        let p = FilterParams::wpt(Wavelet::Haar, 1);
        let grid = wpt_encode(&[1.0; 8], &p).unwrap();
        assert_eq!(grid.bands(), 2);
        for v in grid.band(0) {
            assert!((v - 2f64.sqrt()).abs() < 1e-15);
        }
        assert!(grid.band(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn impulse_energy() {
        let p = FilterParams::wpt(Wavelet::Haar, 1);
        let mut x = vec![0.0; 16];
        x[5] = 1.0;
        let grid = wpt_encode(&x, &p).unwrap();
        assert!((grid.energy() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let p = FilterParams::wpt(Wavelet::Db4, 3);
        assert!(matches!(wpt_encode(&[0.0; 12], &p), Err(Error::Shape(_))));
        let grid = CoeffGrid::zeros(4, 4);
        assert!(matches!(wpt_decode(&grid, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn decode_of_zero_grid() {
        let p = FilterParams::wpt(Wavelet::Db4, 3);
        let x = wpt_decode(&CoeffGrid::zeros(8, 8), &p).unwrap();
        assert!(x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn reconstruction_2048_five_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let wpt = FilterParams::wpt(Wavelet::Db4, 5);
        let lwpt = FilterParams::lwpt(Wavelet::Db4, 5);
        let x = random_window(&mut rng, 2048);
        let g = wpt_encode(&x, &wpt).unwrap();
        assert_eq!((g.bands(), g.len()), (32, 64));
        let y = wpt_decode(&g, &wpt).unwrap();
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");

        let gl = wpt_encode(&x, &lwpt).unwrap();
        assert!(g.as_slice().iter().zip(gl.as_slice()).all(|(a, b)| (a - b).abs() < 1e-12));
        let yl = wpt_decode(&gl, &lwpt).unwrap();
        let err = x.iter().zip(&yl).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6);
    }

    #[test]
    fn frozen_backward_gives_no_parameter_gradient() {
        let p = FilterParams::wpt(Wavelet::Db4, 2);
        assert_eq!(p.num_learnable(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_window(&mut rng, 32);
        let (grid, tape) = encode_with_tape(&x, &p).unwrap();
        let mut pg = p.zeros_like();
        let _ = encode_backward(&tape, &p, &grid, Some(&mut pg));
        assert_eq!(pg, p.zeros_like());
    }

    #[test]
    fn decode_gradient_is_encode_for_orthonormal_kernels() {
        let p = FilterParams::wpt(Wavelet::Db4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = CoeffGrid::new(8, 8, random_window(&mut rng, 64)).unwrap();
        let (_, tape) = decode_with_tape(&grid, &p).unwrap();
        let up = random_window(&mut rng, 64);
        let back = decode_backward(&tape, &p, &up, None);
        let enc = wpt_encode(&up, &p).unwrap();
        for (a, b) in back.as_slice().iter().zip(enc.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Random learnable parameters away from the identity initialization.
    fn perturbed_lwpt(rng: &mut ChaCha8Rng, levels: usize) -> FilterParams {
        let mut p = FilterParams::lwpt(Wavelet::Db4, levels);
        for k in &mut p.kernels {
            for v in k {
                *v += rng.random_range(-0.05..0.05);
            }
        }
        for b in &mut p.biases {
            for v in b {
                *v = rng.random_range(0.02..0.3);
            }
        }
        p
    }

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
    }

    fn visit_scalars(p: &mut FilterParams, mut f: impl FnMut(&mut f64, usize)) {
        let mut i = 0;
        for k in &mut p.kernels {
            for v in k {
                f(v, i);
                i += 1;
            }
        }
        for b in &mut p.biases {
            for v in b {
                f(v, i);
                i += 1;
            }
        }
    }

    fn flat(p: &FilterParams) -> Vec<f64> {
        p.kernels.iter().flatten().chain(p.biases.iter().flatten()).copied().collect()
    }

    #[test]
    fn encode_decode_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let levels = 2;
        let params = perturbed_lwpt(&mut rng, levels);
        let x: Vec<f64> = random_window(&mut rng, 32).iter().map(|v| v * 0.4).collect();
        let weights = random_window(&mut rng, 32);
        // scalar loss: <weights, decode(encode(x))> + 0.5 |grid|^2
        let loss = |p: &FilterParams| {
            let g = wpt_encode(&x, p).unwrap();
            let y = wpt_decode(&g, p).unwrap();
            y.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>() + 0.5 * g.energy()
        };
        let (grid, etape) = encode_with_tape(&x, &params).unwrap();
        let (_, dtape) = decode_with_tape(&grid, &params).unwrap();
        let mut grads = params.zeros_like();
        let mut ggrid = decode_backward(&dtape, &params, &weights, Some(&mut grads));
        for (gv, cv) in ggrid.as_mut_slice().iter_mut().zip(grid.as_slice()) {
            *gv += cv;
        }
        let _ = encode_backward(&etape, &params, &ggrid, Some(&mut grads));
        let analytic = flat(&grads);
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        let mut p = params.clone();
        let n = analytic.len();
        for idx in 0..n {
            let mut plus = 0.0;
            let mut minus = 0.0;
            visit_scalars(&mut p, |v, i| {
                if i == idx {
                    *v += eps;
                }
            });
            plus += loss(&p);
            visit_scalars(&mut p, |v, i| {
                if i == idx {
                    *v -= 2.0 * eps;
                }
            });
            minus += loss(&p);
            visit_scalars(&mut p, |v, i| {
                if i == idx {
                    *v += eps;
                }
            });
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[idx], numeric));
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn encode_input_gradient_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let params = perturbed_lwpt(&mut rng, 3);
        let x: Vec<f64> = random_window(&mut rng, 64).iter().map(|v| v * 0.3).collect();
        let wts = random_window(&mut rng, 64);
        let loss = |x: &[f64]| {
            let g = wpt_encode(x, &params).unwrap();
            g.as_slice().iter().zip(&wts).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, tape) = encode_with_tape(&x, &params).unwrap();
        let up = CoeffGrid::new(8, 8, wts.clone()).unwrap();
        let gx = encode_backward(&tape, &params, &up, None);
        let eps = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            let numeric = (loss(&xp) - loss(&xm)) / (2.0 * eps);
            assert!(rel_err(gx[i], numeric) < 1e-4);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn ht_is_odd(x in -1e6f64..1e6, b in -10.0f64..10.0) {
                prop_assert_eq!(ht(-x, b), -ht(x, b));
            }

            #[test]
            fn ht_dead_zone(x in -0.5f64..0.5) {
                prop_assert!(ht(x, 1.0).abs() <= 0.01 * x.abs());
            }

            #[test]
            fn frozen_round_trip_any_depth(seed in 0u64..10_000, wexp in 1u32..9, lfrac in 0.0f64..1.0) {
                let w = 1usize << wexp;
                let levels = ((wexp as f64 + 1.0) * lfrac) as usize;
                let levels = levels.min(wexp as usize);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_window(&mut rng, w);
                let p = FilterParams::wpt(Wavelet::Db4, levels);
                let g = wpt_encode(&x, &p).unwrap();
                let ex: f64 = x.iter().map(|v| v * v).sum();
                prop_assert!((g.energy() - ex).abs() < 1e-9 * ex.max(1e-300));
                let y = wpt_decode(&g, &p).unwrap();
                for (a, b) in x.iter().zip(&y) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }

            #[test]
            fn frozen_is_linear(seed in 0u64..10_000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_window(&mut rng, 128);
                let y = random_window(&mut rng, 128);
                let p = FilterParams::wpt(Wavelet::Db4, 4);
                let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
                let gm = wpt_encode(&mix, &p).unwrap();
                let gx = wpt_encode(&x, &p).unwrap();
                let gy = wpt_encode(&y, &p).unwrap();
                for ((m, a), b) in gm.as_slice().iter().zip(gx.as_slice()).zip(gy.as_slice()) {
                    prop_assert!((m - (alpha * a + beta * b)).abs() < 1e-9);
                }
            }

            #[test]
            fn lwpt_at_init_matches_wpt(seed in 0u64..10_000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = random_window(&mut rng, 256);
                let wpt = FilterParams::wpt(Wavelet::Db4, 3);
                let lwpt = FilterParams::lwpt(Wavelet::Db4, 3);
                let a = wpt_encode(&x, &wpt).unwrap();
                let b = wpt_encode(&x, &lwpt).unwrap();
                for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
                    prop_assert!((u - v).abs() < 1e-6);
                }
                let ra = wpt_decode(&a, &wpt).unwrap();
                let rb = wpt_decode(&b, &lwpt).unwrap();
                for (u, v) in ra.iter().zip(&rb) {
                    prop_assert!((u - v).abs() < 1e-6);
                }
            }
        }
    }
}
