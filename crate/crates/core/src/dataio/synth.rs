//! Desk-scale stand-in corpus with three surrogate classes: band-limited
//! breath noise, noise plus a sustained tone, and noise plus decaying
//! transients.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;

use super::{write_wav, AudioClip, DatasetSplit, Label, RespiratoryEvent, SplitManifest, SplitName};
use crate::dsp::{apply_filter, design_butterworth_bandpass};
use crate::error::{Error, Result};

pub const SYNTH_SAMPLE_RATE: u32 = 8000;

const RECORDING_MS: u64 = 1200;
const NOISE_RMS: f64 = 0.08;
const FLOOR_RMS: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurrogateClass {
    Normal,
    Wheeze,
    Crackle,
}

impl SurrogateClass {
    pub const ALL: [SurrogateClass; 3] = [SurrogateClass::Normal, SurrogateClass::Wheeze, SurrogateClass::Crackle];

    pub fn label(self) -> Label {
        match self {
            SurrogateClass::Normal => Label::Normal,
            SurrogateClass::Wheeze => Label::Wheeze,
            SurrogateClass::Crackle => Label::FineCrackle,
        }
    }

    fn annotation_type(self) -> &'static str {
        match self {
            SurrogateClass::Normal => "Normal",
            SurrogateClass::Wheeze => "Wheeze",
            SurrogateClass::Crackle => "Fine Crackle",
        }
    }

    fn tag(self) -> &'static str {
        match self {
            SurrogateClass::Normal => "normal",
            SurrogateClass::Wheeze => "wheeze",
            SurrogateClass::Crackle => "crackle",
        }
    }
}

/// White Gaussian noise band-passed to 40-850 Hz and scaled to `rms`.
pub fn band_limited_noise<R: Rng>(rng: &mut R, n: usize, rms: f64) -> Result<Vec<f64>> {
    let white: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let filter = design_butterworth_bandpass(4, 40.0, 850.0, SYNTH_SAMPLE_RATE)?;
    let y = apply_filter(&filter, &AudioClip::new(white, SYNTH_SAMPLE_RATE)?)?.into_samples();
    let cur = (y.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    Ok(y.into_iter().map(|v| v * rms / cur).collect())
}

/// One clip of `n` samples at 8 kHz. Returns the clip and, for the tonal
/// class, the drawn fundamental.
pub fn synthesize_clip<R: Rng>(class: SurrogateClass, n: usize, rng: &mut R) -> Result<(AudioClip, Option<f64>)> {
    let fs = SYNTH_SAMPLE_RATE as f64;
    let mut tone = None;
    let x = match class {
        SurrogateClass::Normal => {
            // slow breathing envelope over band-limited noise
            let rate = rng.gen_range(0.5..1.5);
            let phase = rng.gen_range(0.0..2.0 * PI);
            band_limited_noise(rng, n, NOISE_RMS)?
                .into_iter()
                .enumerate()
                .map(|(i, v)| v * (0.75 + 0.25 * (2.0 * PI * rate * i as f64 / fs + phase).sin()))
                .collect()
        }
        SurrogateClass::Wheeze => {
            let f0 = rng.gen_range(400.0..800.0);
            let amp = rng.gen_range(0.15..0.3);
            let phase = rng.gen_range(0.0..2.0 * PI);
            tone = Some(f0);
            let mut x = band_limited_noise(rng, n, FLOOR_RMS)?;
            for (i, v) in x.iter_mut().enumerate() {
                *v += amp * (2.0 * PI * f0 * i as f64 / fs + phase).sin();
            }
            x
        }
        SurrogateClass::Crackle => {
            let mut x = band_limited_noise(rng, n, FLOOR_RMS)?;
            let count = rng.gen_range(3..=10);
            for _ in 0..count {
                let at = rng.gen_range(0..n);
                let amp = rng.gen_range(0.3..0.7) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let tau = rng.gen_range(0.002..0.006) * fs;
                let f = rng.gen_range(150.0..600.0);
                for (k, v) in x[at..].iter_mut().enumerate().take((8.0 * tau) as usize) {
                    let t = k as f64;
                    *v += amp * (-t / tau).exp() * (2.0 * PI * f * t / fs).cos();
                }
            }
            x
        }
    };
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let x = if peak > 0.9 {
        x.into_iter().map(|v| v * 0.9 / peak).collect()
    } else {
        x
    };
    Ok((AudioClip::new(x, SYNTH_SAMPLE_RATE)?, tone))
}

/// Per-class split sizes: 20% each to the two test splits, the rest to train.
fn split_sizes(n: usize) -> [usize; 3] {
    let test = (n as f64 * 0.2).round() as usize;
    let (intra, inter) = if n >= 3 { (test.max(1), test.max(1)) } else { (0, n - 1) };
    [n - intra - inter, intra, inter]
}

/// Writes `audio/<id>.wav`, `annotations/<id>.json` and `split.txt` under
/// `out_dir`. Training and intra-patient recordings share patients p0..p7;
/// inter-patient recordings use a disjoint q-series.
pub fn generate_synthetic_corpus(
    n_per_class: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<[DatasetSplit; 3]> {
    if n_per_class == 0 {
        return Err(Error::Precondition("n_per_class must be at least 1".into()));
    }
    let out = out_dir.as_ref();
    let audio = out.join("audio");
    let ann = out.join("annotations");
    for d in [&audio, &ann] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_samples = (RECORDING_MS * SYNTH_SAMPLE_RATE as u64 / 1000) as usize;
    let sizes = split_sizes(n_per_class);
    let mut manifest = SplitManifest::default();
    let mut splits = [
        DatasetSplit::new(SplitName::Train),
        DatasetSplit::new(SplitName::TestIntra),
        DatasetSplit::new(SplitName::TestInter),
    ];
    for class in SurrogateClass::ALL {
        let mut k = 0;
        for (s, split) in [SplitName::Train, SplitName::TestIntra, SplitName::TestInter]
            .into_iter()
            .enumerate()
        {
            for j in 0..sizes[s] {
                let patient = match split {
                    SplitName::Train => format!("p{}", j % 8),
                    SplitName::TestIntra => format!("p{}", (j % sizes[0]) % 8),
                    SplitName::TestInter => format!("q{}", j % 4),
                };
                let id = format!("{patient}_{}_{k:04}", class.tag());
                k += 1;
                let (clip, _) = synthesize_clip(class, n_samples, &mut rng)?;
                let onset = rng.gen_range(0..100u64);
                let offset = onset + rng.gen_range(900..=RECORDING_MS - 100);
                let wav = audio.join(format!("{id}.wav"));
                write_wav(&wav, &clip)?;
                let doc = json!({
                    "patient_id": patient,
                    "event_annotation": [{
                        "start": onset.to_string(),
                        "end": offset.to_string(),
                        "type": class.annotation_type(),
                    }],
                });
                let json_path = ann.join(format!("{id}.json"));
                let text = serde_json::to_string_pretty(&doc).expect("static document");
                std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
                manifest.assignments.insert(id.clone(), split);
                splits[s].events.push(RespiratoryEvent {
                    recording_id: id,
                    onset_ms: onset,
                    offset_ms: offset,
                    label: class.label(),
                    patient_id: patient,
                });
            }
        }
    }
    let split_path = out.join("split.txt");
    std::fs::write(&split_path, manifest.to_text()).map_err(|e| Error::io(&split_path, e))?;
    log::info!("wrote {} synthetic recordings to {}", 3 * n_per_class, out.display());
    Ok(splits)
}
