use std::f64::consts::PI;

use crate::dataio::AudioClip;
use crate::error::{Error, Result};

/// Zero crossings of the interpolation kernel on each side.
const ZERO_CROSSINGS: f64 = 32.0;
const KAISER_BETA: f64 = 8.6;

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling with a Kaiser-windowed sinc kernel whose cutoff
/// sits at the lower of the two Nyquist frequencies.
pub fn resample(clip: &AudioClip, target_hz: u32) -> Result<AudioClip> {
    if target_hz == 0 {
        return Err(Error::Precondition("target sample rate must be positive".into()));
    }
    let source_hz = clip.sample_rate_hz();
    if source_hz == target_hz {
        return Ok(clip.clone());
    }
    let x = clip.samples();
    let ratio = target_hz as f64 / source_hz as f64;
    let n_out = (x.len() as f64 * ratio).round() as usize;
    if n_out == 0 {
        return Err(Error::EmptyInput("resampled clip would be empty".into()));
    }
    let rho = ratio.min(1.0);
    let half = ZERO_CROSSINGS / rho;
    let i0_beta = bessel_i0(KAISER_BETA);
    let kernel = |d: f64| {
        if d.abs() > half {
            return 0.0;
        }
        let u = d / half;
        rho * sinc(rho * d) * bessel_i0(KAISER_BETA * (1.0 - u * u).max(0.0).sqrt()) / i0_beta
    };

    // Output n sits at source position n * down / up; its fractional part
    // cycles through `up` phases, so kernel taps are computed once per phase.
    let g = gcd(source_hz as u64, target_hz as u64);
    let (up, down) = (target_hz as u64 / g, source_hz as u64 / g);
    let reach = half.ceil() as i64 + 1;
    let mut taps: Vec<Option<Vec<f64>>> = vec![None; up as usize];
    let len = x.len() as i64;

    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out as u64 {
        let base = (n * down / up) as i64;
        let phase = (n * down % up) as usize;
        let frac = phase as f64 / up as f64;
        let w = taps[phase].get_or_insert_with(|| (-reach..=reach).map(|j| kernel(frac - j as f64)).collect());
        let mut acc = 0.0;
        for (j, wj) in (-reach..=reach).zip(w.iter()) {
            let k = base + j;
            if k >= 0 && k < len {
                acc += x[k as usize] * wj;
            }
        }
        out.push(acc);
    }
    AudioClip::new(out, target_hz)
}
