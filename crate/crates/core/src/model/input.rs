use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use super::WlannConfig;
use crate::dataio::AudioClip;
use crate::dsp::{
    apply_filter, design_butterworth_bandpass, log_mel, resample, spec_augment, BandpassFilter, LogMelSpectrogram,
};
use crate::error::Result;
use crate::ndiff::TensorD;

/// Model-ready features of one event.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    /// `[1, L]`
    pub waveform: TensorD,
    pub spec: LogMelSpectrogram,
}

type FilterKey = (usize, u64, u64, u32);

fn cached_filter(cfg: &WlannConfig) -> Result<Arc<BandpassFilter>> {
    static CACHE: OnceLock<Mutex<HashMap<FilterKey, Arc<BandpassFilter>>>> = OnceLock::new();
    let pre = &cfg.preprocess;
    let key = (
        pre.filter_order,
        pre.low_hz.to_bits(),
        pre.high_hz.to_bits(),
        cfg.sample_rate,
    );
    let mut map = CACHE
        .get_or_init(Default::default)
        .lock()
        .expect("filter cache poisoned");
    if let Some(f) = map.get(&key) {
        return Ok(f.clone());
    }
    let f = Arc::new(design_butterworth_bandpass(
        pre.filter_order,
        pre.low_hz,
        pre.high_hz,
        cfg.sample_rate,
    )?);
    map.insert(key, f.clone());
    Ok(f)
}

/// Symmetric zero padding or centred cropping to exactly `len` samples.
pub fn center_pad_or_crop(x: &[f64], len: usize) -> Vec<f64> {
    if x.len() >= len {
        let start = (x.len() - len) / 2;
        x[start..start + len].to_vec()
    } else {
        let left = (len - x.len()) / 2;
        let mut out = vec![0.0; len];
        out[left..left + x.len()].copy_from_slice(x);
        out
    }
}

/// The deterministic part of preprocessing: resample, band-pass, centre
/// pad/crop and log-mel.
pub fn prepare_features(clip: &AudioClip, cfg: &WlannConfig) -> Result<ModelInput> {
    let clip = resample(clip, cfg.sample_rate)?;
    let filter = cached_filter(cfg)?;
    let filtered = apply_filter(&filter, &clip)?;
    let fixed = AudioClip::new(
        center_pad_or_crop(filtered.samples(), cfg.input_samples()),
        cfg.sample_rate,
    )?;
    let spec = log_mel(&fixed)?;
    let waveform = TensorD::new(vec![1, fixed.len()], fixed.into_samples())?;
    Ok(ModelInput { waveform, spec })
}

/// Applies training-time augmentation to precomputed features.
pub fn augment_input(input: &ModelInput, cfg: &WlannConfig, seed: u64) -> Result<ModelInput> {
    Ok(ModelInput {
        waveform: input.waveform.clone(),
        spec: spec_augment(&input.spec, &cfg.augment.with_seed(seed))?,
    })
}

/// Full input pipeline for one event clip; `train_mode` adds SpecAugment
/// with the given per-example seed.
pub fn prepare_input(clip: &AudioClip, cfg: &WlannConfig, train_mode: bool, seed: u64) -> Result<ModelInput> {
    let input = prepare_features(clip, cfg)?;
    if train_mode {
        augment_input(&input, cfg, seed)
    } else {
        Ok(input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_and_crop_are_centred() {
        assert_eq!(center_pad_or_crop(&[1.0, 2.0], 6), vec![0.0, 0.0, 1.0, 2.0, 0.0, 0.0]);
        assert_eq!(center_pad_or_crop(&[1.0, 2.0, 3.0, 4.0, 5.0], 3), vec![2.0, 3.0, 4.0]);
        assert_eq!(center_pad_or_crop(&[1.0, 2.0], 2), vec![1.0, 2.0]);
    }

    #[test]
    fn two_second_event_is_padded_to_eight() {
        let cfg = WlannConfig::default();
        let x: Vec<f64> = (0..32000).map(|i| (i as f64 * 0.05).sin() * 0.3).collect();
        let input = prepare_input(&AudioClip::new(x, 16000).unwrap(), &cfg, false, 0).unwrap();
        assert_eq!(input.waveform.shape(), &[1, 128000]);
        assert_eq!(input.spec.n_frames(), 798);
        let w = input.waveform.values();
        let outside: f64 = w[..48000].iter().chain(&w[80000..]).map(|v| v * v).sum();
        assert_eq!(outside, 0.0);
        assert!(w[48000..80000].iter().map(|v| v * v).sum::<f64>() > 1.0);
    }

    #[test]
    fn eight_khz_nine_seconds_is_cropped() {
        let cfg = WlannConfig::default();
        let input = prepare_input(&AudioClip::new(vec![0.01; 72000], 8000).unwrap(), &cfg, false, 0).unwrap();
        assert_eq!(input.waveform.len(), 128000);
    }

    #[test]
    fn augmentation_is_seeded() {
        let cfg = WlannConfig::micro();
        let clip = AudioClip::new((0..8000).map(|i| (i as f64 * 0.3).sin() * 0.2).collect(), 8000).unwrap();
        let a = prepare_input(&clip, &cfg, true, 9).unwrap();
        assert_eq!(a, prepare_input(&clip, &cfg, true, 9).unwrap());
        assert_ne!(a.spec, prepare_input(&clip, &cfg, false, 9).unwrap().spec);
    }
}
