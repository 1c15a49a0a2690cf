#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wlann::dataio::{synthesize_clip, SurrogateClass, SYNTH_SAMPLE_RATE};
use wlann::model::{prepare_features, WlannConfig};
use wlann::train::Example;

/// `n` in-memory synthetic events cycling through `classes`, 1 s each.
pub fn synthetic_examples(classes: &[SurrogateClass], n: usize, seed: u64, cfg: &WlannConfig) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let class = classes[i % classes.len()];
            let (clip, _) = synthesize_clip(class, SYNTH_SAMPLE_RATE as usize, &mut rng).unwrap();
            Example {
                id: format!("ex{i}"),
                input: prepare_features(&clip, cfg).unwrap(),
                label: class.label(),
            }
        })
        .collect()
}

pub fn micro_no_augment() -> WlannConfig {
    let mut cfg = WlannConfig::micro();
    cfg.train.augment = false;
    cfg
}
