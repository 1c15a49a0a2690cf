use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{one_hot, score_loss};
use crate::dataio::{synthesize_clip, Label, SurrogateClass};
use crate::error::Result;
use crate::model::{backward, forward_trace, prepare_features, WlannConfig, WlannParams};
use crate::ndiff::{grad_check, GradCheckOptions, GradCheckReport, Parameters, TensorD};

/// The micro configuration with a 4-unit GRU and two classes, as used for
/// the end-to-end gradient check.
pub fn gradcheck_config() -> WlannConfig {
    WlannConfig {
        classes: 2,
        gru_hidden: 4,
        ..WlannConfig::micro()
    }
}

fn rebuild(layout: &WlannParams, flat: &[TensorD]) -> WlannParams {
    let mut p = layout.clone();
    let mut i = 0;
    p.visit_mut("", &mut |_, t| {
        t.values_mut().copy_from_slice(flat[i].values());
        i += 1;
    });
    p
}

/// Finite-difference check of every model parameter under the training
/// objective, on one synthetic event.
pub fn model_grad_check(cfg: &WlannConfig, seed: u64, opts: GradCheckOptions) -> Result<GradCheckReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (clip, _) = synthesize_clip(SurrogateClass::Wheeze, 8000, &mut rng)?;
    let input = prepare_features(&clip, cfg)?;
    let label = Label::from_index(1.min(cfg.classes - 1)).expect("valid class");
    let target = one_hot(label.index(), cfg.classes)?;
    let params = WlannParams::init(cfg, seed);

    let objective = |p: &WlannParams| -> Result<f64> {
        let trace = forward_trace(&input, p, cfg)?;
        Ok(score_loss(
            trace.probabilities(),
            &target,
            cfg.focal_gamma,
            cfg.train.loss_on_normalized_scores,
        )?
        .0)
    };
    let trace = forward_trace(&input, &params, cfg)?;
    let (_, g_scores) = score_loss(
        trace.probabilities(),
        &target,
        cfg.focal_gamma,
        cfg.train.loss_on_normalized_scores,
    )?;
    let grads = backward(&trace, &params, cfg, &g_scores)?;

    let named = params.named();
    let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
    let mut flat: Vec<TensorD> = named.into_iter().map(|(_, t)| t.clone()).collect();
    for (t, (_, g)) in flat.iter_mut().zip(grads.named()) {
        t.accumulate_grad(g.values())?;
    }
    grad_check(|ts| objective(&rebuild(&params, ts)), &flat, &names, opts)
}
