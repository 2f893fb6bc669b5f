//! Magnitude spectra and one-third-octave band levels.

use std::f64::consts::PI;

use crate::{Error, Result};

/// In-place iterative radix-2 FFT (decimation in time).
pub fn fft(re: &mut [f64], im: &mut [f64]) -> Result<()> {
    let n = re.len();
    if n != im.len() || !n.is_power_of_two() {
        return Err(Error::Shape(format!("FFT length {n} is not a power of two")));
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) };
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let (s, c) = (ang * k as f64).sin_cos();
                let a = start + k;
                let b = a + len / 2;
                let tr = re[b] * c - im[b] * s;
                let ti = re[b] * s + im[b] * c;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
    Ok(())
}

/// Single-sided amplitude spectrum, `W/2 + 1` bins. Interior bins are
/// scaled by `2/W` so a unit sine on a bin centre reads 1.
pub fn magnitude_spectrum(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    let mut re = x.to_vec();
    let mut im = vec![0.0; n];
    fft(&mut re, &mut im)?;
    Ok((0..=n / 2)
        .map(|k| {
            let m = re[k].hypot(im[k]) / n as f64;
            if k == 0 || k == n / 2 {
                m
            } else {
                2.0 * m
            }
        })
        .collect())
}

/// Average of per-window magnitude spectra.
pub fn mean_spectrum(windows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Shape("no windows to average".into()))?;
    let mut acc = vec![0.0; first.len() / 2 + 1];
    for w in windows {
        if w.len() != first.len() {
            return Err(Error::Shape("windows differ in length".into()));
        }
        for (a, m) in acc.iter_mut().zip(magnitude_spectrum(w)?) {
            *a += m;
        }
    }
    let n = windows.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

pub const OCTAVE_REF_HZ: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OctaveBand {
    /// `n` in `f_c = 1000·2^(n/3)`.
    pub index: i32,
    pub center: f64,
    pub lower: f64,
    pub upper: f64,
    /// `10·log10` of the summed squared magnitude of bins in `[lower, upper)`;
    /// `-inf` when the band holds no power.
    pub level_db: f64,
}

/// Base-2 one-third-octave bands covering `(0, fs/2]`, from the band that
/// contains the first non-DC bin up to the band that contains Nyquist.
pub fn third_octave(spectrum: &[f64], sample_rate: f64) -> Result<Vec<OctaveBand>> {
    if spectrum.len() < 2 {
        return Err(Error::Shape("spectrum needs at least two bins".into()));
    }
    let w = 2 * (spectrum.len() - 1);
    let df = sample_rate / w as f64;
    let nyquist = sample_rate / 2.0;
    let band_of = |f: f64| (3.0 * (f / OCTAVE_REF_HZ).log2()).round() as i32;
    let mut out = Vec::new();
    for n in band_of(df)..=band_of(nyquist) {
        let center = OCTAVE_REF_HZ * 2f64.powf(n as f64 / 3.0);
        let lower = center * 2f64.powf(-1.0 / 6.0);
        let upper = center * 2f64.powf(1.0 / 6.0);
        let mut power = 0.0;
        for (k, m) in spectrum.iter().enumerate().skip(1) {
            let f = k as f64 * df;
            if f >= lower && (f < upper || (k == spectrum.len() - 1 && f <= upper)) {
                power += m * m;
            }
        }
        out.push(OctaveBand {
            index: n,
            center,
            lower,
            upper,
            level_db: 10.0 * power.log10(),
        });
    }
    Ok(out)
}

/// Decibel value with `-inf` written as the literal token.
pub fn format_db(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

/// `20·log10` of an amplitude.
pub fn amplitude_db(m: f64) -> f64 {
    20.0 * m.log10()
}
