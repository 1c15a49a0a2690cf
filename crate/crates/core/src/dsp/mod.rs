//! Deterministic preprocessing: resampling, band-pass filtering, log-mel
//! extraction and spectrogram augmentation.

mod augment;
mod butterworth;
mod fbank;
mod resample;

pub use augment::{spec_augment, time_warp, AugmentParams};
pub use butterworth::{apply_filter, design_butterworth_bandpass, BandpassFilter};
pub use fbank::{
    frame_count, hamming, hz_to_mel, log_mel, mel_to_hz, rfft512, LogMelSpectrogram, MelFilterbank, FBANK_SAMPLE_RATE,
    FFT_SIZE, HOP_SAMPLES, LOG_FLOOR, MEL_BINS, WINDOW_SAMPLES,
};
pub use resample::resample;
