//! 128-bin log-mel filterbank features: 25 ms Hamming frames every 10 ms at
//! 16 kHz, 512-point power spectrum, HTK mel spacing over 0-8 kHz.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dataio::AudioClip;
use crate::error::{Error, Result};

pub const FBANK_SAMPLE_RATE: u32 = 16000;
pub const WINDOW_SAMPLES: usize = 400;
pub const HOP_SAMPLES: usize = 160;
pub const FFT_SIZE: usize = 512;
pub const MEL_BINS: usize = 128;
pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Number of frames produced for `n` samples (zero when `n < 400`).
pub fn frame_count(n: usize) -> usize {
    if n < WINDOW_SAMPLES {
        0
    } else {
        (n - WINDOW_SAMPLES) / HOP_SAMPLES + 1
    }
}

/// Log filterbank energies stored mel-major: `values[m * n_frames + t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMelSpectrogram {
    values: Vec<f64>,
    n_mels: usize,
    n_frames: usize,
}

impl LogMelSpectrogram {
    pub fn new(values: Vec<f64>, n_mels: usize, n_frames: usize) -> Result<Self> {
        if values.len() != n_mels * n_frames {
            return Err(Error::Shape(format!(
                "{} values for a {n_mels}x{n_frames} spectrogram",
                values.len()
            )));
        }
        Ok(Self {
            values,
            n_mels,
            n_frames,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, mel: usize, frame: usize) -> f64 {
        self.values[mel * self.n_frames + frame]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Triangular filters on the 257 non-negative FFT bins, each peak-normalized.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `weights[m]` has one entry per FFT bin.
    pub weights: Vec<Vec<f64>>,
    /// Centre frequency of each filter in Hz.
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32) -> Self {
        let n_bins = n_fft / 2 + 1;
        let nyq = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyq);
        let edges: Vec<f64> = (0..n_mels + 2).map(|i| top * i as f64 / (n_mels + 1) as f64).collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let bin_mel: Vec<f64> = (0..n_bins).map(|k| hz_to_mel(k as f64 * bin_hz)).collect();
        let mut weights = Vec::with_capacity(n_mels);
        let mut centers_hz = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut w: Vec<f64> = bin_mel
                .iter()
                .map(|&b| ((b - l) / (c - l)).min((r - b) / (r - c)).max(0.0))
                .collect();
            let peak = w.iter().cloned().fold(0.0, f64::max);
            if peak > 0.0 {
                w.iter_mut().for_each(|v| *v /= peak);
            } else {
                // narrower than one FFT bin: collapse onto the nearest bin
                let k = ((mel_to_hz(c) / bin_hz).round() as usize).min(n_bins - 1);
                w[k] = 1.0;
            }
            weights.push(w);
            centers_hz.push(mel_to_hz(c));
        }
        Self { weights, centers_hz }
    }

    /// The filterbank used by [`log_mel`].
    pub fn standard() -> &'static MelFilterbank {
        static BANK: OnceLock<MelFilterbank> = OnceLock::new();
        BANK.get_or_init(|| MelFilterbank::new(MEL_BINS, FFT_SIZE, FBANK_SAMPLE_RATE))
    }
}

pub fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

fn fft_plan() -> Arc<dyn Fft<f64>> {
    static PLAN: OnceLock<Arc<dyn Fft<f64>>> = OnceLock::new();
    PLAN.get_or_init(|| FftPlanner::new().plan_fft_forward(FFT_SIZE))
        .clone()
}

/// Forward DFT of a real frame zero-padded to 512 points.
pub fn rfft512(frame: &[f64]) -> Result<Vec<Complex64>> {
    if frame.len() > FFT_SIZE {
        return Err(Error::Precondition(format!(
            "frame of {} samples exceeds FFT size {FFT_SIZE}",
            frame.len()
        )));
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); FFT_SIZE];
    for (b, &x) in buf.iter_mut().zip(frame) {
        b.re = x;
    }
    fft_plan().process(&mut buf);
    Ok(buf)
}

/// Log-mel spectrogram of a 16 kHz clip.
pub fn log_mel(clip: &AudioClip) -> Result<LogMelSpectrogram> {
    if clip.sample_rate_hz() != FBANK_SAMPLE_RATE {
        return Err(Error::Precondition(format!(
            "log_mel expects {FBANK_SAMPLE_RATE} Hz audio, got {} Hz",
            clip.sample_rate_hz()
        )));
    }
    let x = clip.samples();
    let n_frames = frame_count(x.len());
    if n_frames == 0 {
        return Err(Error::Precondition(format!(
            "clip of {} samples is shorter than one {WINDOW_SAMPLES}-sample window",
            x.len()
        )));
    }
    let bank = MelFilterbank::standard();
    let win = hamming(WINDOW_SAMPLES);
    let plan = fft_plan();
    let n_bins = FFT_SIZE / 2 + 1;
    let mut values = vec![0.0; MEL_BINS * n_frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); FFT_SIZE];
    let mut power = vec![0.0; n_bins];
    for t in 0..n_frames {
        let frame = &x[t * HOP_SAMPLES..][..WINDOW_SAMPLES];
        buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
        for ((b, &s), &w) in buf.iter_mut().zip(frame).zip(&win) {
            b.re = s * w;
        }
        plan.process(&mut buf);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p = b.norm_sqr();
        }
        for (m, w) in bank.weights.iter().enumerate() {
            let e: f64 = w.iter().zip(&power).map(|(a, b)| a * b).sum();
            values[m * n_frames + t] = e.max(LOG_FLOOR).ln();
        }
    }
    LogMelSpectrogram::new(values, MEL_BINS, n_frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_gives_98_frames() {
        let clip = AudioClip::new(vec![0.0; 16000], 16000).unwrap();
        let s = log_mel(&clip).unwrap();
        assert_eq!(s.n_frames(), 98);
        assert_eq!(s.n_mels(), 128);
    }

    #[test]
    fn silence_hits_the_floor() {
        let clip = AudioClip::new(vec![0.0; 1200], 16000).unwrap();
        let s = log_mel(&clip).unwrap();
        assert!(s.values().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn rejects_wrong_rate_and_short_clip() {
        let c8 = AudioClip::new(vec![0.0; 16000], 8000).unwrap();
        assert!(matches!(log_mel(&c8), Err(Error::Precondition(_))));
        let short = AudioClip::new(vec![0.0; 399], 16000).unwrap();
        assert!(matches!(log_mel(&short), Err(Error::Precondition(_))));
    }

    #[test]
    fn filters_are_unimodal_with_unit_peak() {
        let bank = MelFilterbank::standard();
        assert_eq!(bank.weights.len(), 128);
        for w in &bank.weights {
            assert!(w.iter().all(|&v| v >= 0.0));
            assert_eq!(w.iter().cloned().fold(0.0, f64::max), 1.0);
            let peak = w.iter().position(|&v| v == 1.0).unwrap();
            assert!(w[..=peak].windows(2).all(|p| p[0] <= p[1]));
            assert!(w[peak..].windows(2).all(|p| p[0] >= p[1]));
        }
        assert!(bank.centers_hz.windows(2).all(|c| c[0] < c[1]));
    }

    #[test]
    fn mel_scale_round_trip() {
        for f in [0.0, 100.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }
}
