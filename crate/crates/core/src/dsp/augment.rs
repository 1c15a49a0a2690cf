//! Time warping and frequency masking on log-mel spectrograms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fbank::LogMelSpectrogram;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    /// Maximum warp distance in frames.
    pub time_warp_w: usize,
    /// Maximum width of each frequency mask in mel bins.
    pub freq_mask_width: usize,
    pub freq_mask_count: usize,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            time_warp_w: 5,
            freq_mask_width: 24,
            freq_mask_count: 2,
            seed: 0,
        }
    }
}

impl AugmentParams {
    pub fn disabled() -> Self {
        Self {
            time_warp_w: 0,
            freq_mask_width: 0,
            freq_mask_count: 0,
            seed: 0,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn is_identity(&self) -> bool {
        self.time_warp_w == 0 && (self.freq_mask_count == 0 || self.freq_mask_width == 0)
    }
}

/// Source position for output frame `t` under the two-segment warp that moves
/// `pivot` to `pivot + shift` and keeps both endpoints fixed.
fn warp_source(t: usize, pivot: usize, shift: i64, n_frames: usize) -> f64 {
    let last = (n_frames - 1) as f64;
    let dst = pivot as f64 + shift as f64;
    let t = t as f64;
    if t <= dst {
        if dst == 0.0 {
            0.0
        } else {
            t * pivot as f64 / dst
        }
    } else if dst >= last {
        last
    } else {
        pivot as f64 + (t - dst) * (last - pivot as f64) / (last - dst)
    }
}

pub fn time_warp(spec: &LogMelSpectrogram, pivot: usize, shift: i64) -> LogMelSpectrogram {
    let (f, n) = (spec.n_mels(), spec.n_frames());
    let mut out = vec![0.0; f * n];
    for t in 0..n {
        let src = warp_source(t, pivot, shift, n).clamp(0.0, (n - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let a = src - lo as f64;
        for m in 0..f {
            out[m * n + t] = (1.0 - a) * spec.get(m, lo) + a * spec.get(m, hi);
        }
    }
    LogMelSpectrogram::new(out, f, n).expect("shape preserved")
}

pub fn spec_augment(spec: &LogMelSpectrogram, params: &AugmentParams) -> Result<LogMelSpectrogram> {
    let (f, n) = (spec.n_mels(), spec.n_frames());
    if params.freq_mask_width >= f && params.freq_mask_count > 0 {
        return Err(Error::Precondition(format!(
            "frequency mask width {} must be below {f} mel bins",
            params.freq_mask_width
        )));
    }
    let w = params.time_warp_w;
    if w > 0 && 2 * w >= n {
        return Err(Error::Precondition(format!(
            "degenerate input: warp distance {w} needs more than {} frames, got {n}",
            2 * w
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut out = if w > 0 {
        let pivot = rng.gen_range(w..n - w);
        let shift = rng.gen_range(-(w as i64)..=w as i64);
        time_warp(spec, pivot, shift)
    } else {
        spec.clone()
    };
    if params.freq_mask_count > 0 && params.freq_mask_width > 0 {
        let fill = out.mean();
        for _ in 0..params.freq_mask_count {
            let width = rng.gen_range(0..=params.freq_mask_width);
            let start = rng.gen_range(0..=f - width);
            for m in start..start + width {
                out.values_mut()[m * n..][..n].fill(fill);
            }
        }
    }
    Ok(out)
}
