use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{clip_global_norm, one_hot, save_checkpoint, score_loss, AdamState, Checkpoint};
use crate::dataio::{AudioClip, CorpusDir, DatasetSplit, Label};
use crate::error::{Error, Result};
use crate::model::{augment_input, backward, forward_trace, prepare_features, ModelInput, WlannConfig, WlannParams};
use crate::ndiff::{Parameters, TensorD};

/// One labelled event with its deterministic features precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub input: ModelInput,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: WlannParams,
    pub adam: AdamState,
    pub epoch: u64,
    pub seed: u64,
    /// Mean training loss of every completed epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainState {
    pub fn new(cfg: &WlannConfig) -> Self {
        let mut params = WlannParams::init(cfg, cfg.seed);
        params.round_to_f32();
        let adam = AdamState::new(&params);
        Self {
            params,
            adam,
            epoch: 0,
            seed: cfg.seed,
            epoch_losses: Vec::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub grad_norm: f64,
    /// Batch items whose argmax matched the label.
    pub correct: usize,
}

/// Mixes several integers into one seed (SplitMix64 finalizer).
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x9E37_79B9_7F4A_7C15u64, |acc, &p| {
        let mut z = (acc ^ p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}

pub fn argmax(scores: &TensorD) -> usize {
    scores
        .values()
        .iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
        .0
}

/// Loss, parameter gradient and class scores for one example.
pub fn example_gradient(
    params: &WlannParams,
    cfg: &WlannConfig,
    input: &ModelInput,
    label: Label,
) -> Result<(f64, WlannParams, TensorD)> {
    let trace = forward_trace(input, params, cfg)?;
    let target = one_hot(label.index(), cfg.classes)?;
    let scores = trace.probabilities();
    let (loss, g_scores) = score_loss(scores, &target, cfg.focal_gamma, cfg.train.loss_on_normalized_scores)?;
    let grads = backward(&trace, params, cfg, &g_scores)?;
    Ok((loss, grads, scores.clone()))
}

/// One optimizer update on a batch of prepared examples.
pub fn train_step_examples(batch: &[&Example], state: &mut TrainState, cfg: &WlannConfig) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("training batch is empty".into()));
    }
    let step = state.step();
    let results: Vec<Result<(f64, WlannParams, TensorD)>> = batch
        .par_iter()
        .enumerate()
        .map(|(j, ex)| {
            if cfg.train.augment {
                let aug = augment_input(&ex.input, cfg, derive_seed(&[state.seed, step, j as u64]))?;
                example_gradient(&state.params, cfg, &aug, ex.label)
            } else {
                example_gradient(&state.params, cfg, &ex.input, ex.label)
            }
        })
        .collect();
    let mut total: Option<WlannParams> = None;
    let mut loss = 0.0;
    let mut correct = 0;
    for (ex, r) in batch.iter().zip(results) {
        let (l, g, scores) = r?;
        if !l.is_finite() {
            return Err(Error::Numeric(format!("step {step}: loss {l} on example {}", ex.id)));
        }
        loss += l;
        correct += usize::from(argmax(&scores) == ex.label.index());
        match &mut total {
            None => total = Some(g),
            Some(t) => t.accumulate(&g),
        }
    }
    let n = batch.len() as f64;
    let mut grads = total.expect("non-empty batch");
    grads.visit_mut("", &mut |_, t| t.values_mut().iter_mut().for_each(|v| *v /= n));
    let grad_norm = clip_global_norm(&mut grads, cfg.train.clip_norm);
    if !grad_norm.is_finite() {
        return Err(Error::Numeric(format!("step {step}: gradient norm {grad_norm}")));
    }
    state.adam.update(&mut state.params, &grads, &cfg.train);
    Ok(StepOutcome {
        loss: loss / n,
        grad_norm,
        correct,
    })
}

/// One optimizer update on raw clips.
pub fn train_step(batch: &[(AudioClip, Label)], state: &mut TrainState, cfg: &WlannConfig) -> Result<f64> {
    let examples = batch
        .iter()
        .enumerate()
        .map(|(j, (clip, label))| {
            Ok(Example {
                id: format!("batch[{j}]"),
                input: prepare_features(clip, cfg)?,
                label: *label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Example> = examples.iter().collect();
    Ok(train_step_examples(&refs, state, cfg)?.loss)
}

/// Loads and preprocesses every event of a split (in parallel, order kept).
pub fn load_examples(corpus: &CorpusDir, split: &DatasetSplit, cfg: &WlannConfig) -> Result<Vec<Example>> {
    split
        .events
        .par_iter()
        .map(|ev| {
            Ok(Example {
                id: ev.id(),
                input: prepare_features(&corpus.event_clip(ev)?, cfg)?,
                label: ev.label,
            })
        })
        .collect()
}

/// Runs `epochs` further epochs from `state`, writing a checkpoint to `out`
/// after each one (or once, for zero epochs).
pub fn fit_from(
    mut state: TrainState,
    train: &[Example],
    cfg: &WlannConfig,
    epochs: u64,
    out: Option<&Path>,
) -> Result<TrainState> {
    cfg.validate()?;
    if train.is_empty() && epochs > 0 {
        return Err(Error::EmptyInput("training split has no events".into()));
    }
    if epochs == 0 {
        if let Some(p) = out {
            save_checkpoint(p, &Checkpoint::from_state(cfg, &state))?;
        }
        return Ok(state);
    }
    for _ in 0..epochs {
        let epoch = state.epoch;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[state.seed, epoch])));
        let (mut loss_sum, mut correct) = (0.0, 0);
        for chunk in order.chunks(cfg.train.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let r = train_step_examples(&batch, &mut state, cfg)?;
            loss_sum += r.loss * batch.len() as f64;
            correct += r.correct;
        }
        let mean = loss_sum / train.len() as f64;
        state.epoch_losses.push(mean);
        state.epoch += 1;
        log::info!(
            "epoch {} step {}: mean loss {mean:.6}, train accuracy {:.3}",
            state.epoch,
            state.step(),
            correct as f64 / train.len() as f64
        );
        if let Some(p) = out {
            save_checkpoint(p, &Checkpoint::from_state(cfg, &state))?;
        }
    }
    Ok(state)
}

pub fn fit(train: &[Example], cfg: &WlannConfig, epochs: u64, out: Option<&Path>) -> Result<TrainState> {
    cfg.validate()?;
    fit_from(TrainState::new(cfg), train, cfg, epochs, out)
}
