//! Digital Butterworth band-pass design by the classic analog route:
//! lowpass prototype, lowpass-to-bandpass substitution, then the bilinear
//! transform with both band edges prewarped.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::dataio::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BandpassFilter {
    /// Numerator coefficients, highest power of z^-1 last.
    pub b: Vec<f64>,
    /// Denominator coefficients with `a[0] == 1`.
    pub a: Vec<f64>,
    /// Digital poles, kept for stability checks.
    pub poles: Vec<Complex64>,
    pub order: usize,
    pub low_hz: f64,
    pub high_hz: f64,
    pub sample_rate_hz: u32,
}

impl BandpassFilter {
    /// Complex frequency response `H(e^{jw})` at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz as f64;
        let zinv = Complex64::from_polar(1.0, -w);
        let eval = |c: &[f64]| {
            c.iter()
                .rev()
                .fold(Complex64::new(0.0, 0.0), |acc, &ck| acc * zinv + ck)
        };
        eval(&self.b) / eval(&self.a)
    }

    pub fn gain(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    pub fn gain_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.gain(freq_hz).log10()
    }

    pub fn max_pole_radius(&self) -> f64 {
        self.poles.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.max_pole_radius() < 1.0
    }
}

fn poly(roots: &[Complex64]) -> Vec<Complex64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, ci) in c.iter().enumerate() {
            next[i] += ci;
            next[i + 1] -= ci * r;
        }
        c = next;
    }
    c
}

/// Designs a band-pass filter from an `order`-th order Butterworth lowpass
/// prototype, giving `2 * order` poles.
pub fn design_butterworth_bandpass(order: usize, low_hz: f64, high_hz: f64, fs_hz: u32) -> Result<BandpassFilter> {
    let nyq = fs_hz as f64 / 2.0;
    if order == 0 {
        return Err(Error::Precondition("filter order must be positive".into()));
    }
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyq) {
        return Err(Error::Precondition(format!(
            "band edges must satisfy 0 < {low_hz} < {high_hz} < {nyq} (Nyquist)"
        )));
    }
    let fs = fs_hz as f64;
    let n = order as i64;

    // analog prototype, unit cutoff
    let proto: Vec<Complex64> = (0..n)
        .map(|i| {
            let m = (-n + 1 + 2 * i) as f64;
            -Complex64::from_polar(1.0, PI * m / (2.0 * n as f64))
        })
        .collect();

    let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
    let (wl, wh) = (warp(low_hz), warp(high_hz));
    let bw = wh - wl;
    let w0 = (wl * wh).sqrt();

    // lowpass -> bandpass: each pole splits in two, `order` zeros land at s = 0
    let mut p_analog = Vec::with_capacity(2 * order);
    for p in &proto {
        let pl = p * (bw / 2.0);
        let disc = (pl * pl - w0 * w0).sqrt();
        p_analog.push(pl + disc);
        p_analog.push(pl - disc);
    }
    let z_analog = vec![Complex64::new(0.0, 0.0); order];
    let k_analog = bw.powi(order as i32);

    // bilinear transform
    let fs2 = 2.0 * fs;
    let to_z = |s: &Complex64| (fs2 + s) / (fs2 - s);
    let mut z_dig: Vec<Complex64> = z_analog.iter().map(to_z).collect();
    let poles: Vec<Complex64> = p_analog.iter().map(to_z).collect();
    // zeros at infinity map to z = -1
    z_dig.extend(std::iter::repeat_n(
        Complex64::new(-1.0, 0.0),
        p_analog.len() - z_analog.len(),
    ));
    let num: Complex64 = z_analog.iter().map(|z| fs2 - z).product();
    let den: Complex64 = p_analog.iter().map(|p| fs2 - p).product();
    let k_dig = k_analog * (num / den).re;

    let b: Vec<f64> = poly(&z_dig).iter().map(|c| c.re * k_dig).collect();
    let a: Vec<f64> = poly(&poles).iter().map(|c| c.re).collect();

    Ok(BandpassFilter {
        b,
        a,
        poles,
        order,
        low_hz,
        high_hz,
        sample_rate_hz: fs_hz,
    })
}

/// Runs the difference equation (transposed direct form II, zero initial state).
pub fn apply_filter(filter: &BandpassFilter, clip: &AudioClip) -> Result<AudioClip> {
    if clip.sample_rate_hz() != filter.sample_rate_hz {
        return Err(Error::Precondition(format!(
            "filter designed for {} Hz applied to a {} Hz clip",
            filter.sample_rate_hz,
            clip.sample_rate_hz()
        )));
    }
    AudioClip::new(lfilter(&filter.b, &filter.a, clip.samples()), clip.sample_rate_hz())
}

pub(crate) fn lfilter(b: &[f64], a: &[f64], x: &[f64]) -> Vec<f64> {
    let n = b.len().max(a.len());
    let mut state = vec![0.0; n];
    let a0 = a[0];
    let mut y = Vec::with_capacity(x.len());
    for &xi in x {
        let yi = (b[0] * xi + state[0]) / a0;
        for k in 1..n {
            let bk = b.get(k).copied().unwrap_or(0.0);
            let ak = a.get(k).copied().unwrap_or(0.0);
            state[k - 1] = bk * xi - ak * yi + if k < n - 1 { state[k] } else { 0.0 };
        }
        y.push(yi);
    }
    y
}
