//! Multi-class focal loss `L = -sum_i (1 - y_i)^gamma * p_i * ln(y_i)` with
//! predictions `y` and target distribution `p`.

use crate::error::{Error, Result};
use crate::ndiff::TensorD;

/// Predictions are clamped to `[PRED_EPS, 1 - PRED_EPS]` before the log.
pub const PRED_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalLossParams {
    pub gamma: f64,
}

impl Default for FocalLossParams {
    fn default() -> Self {
        Self { gamma: 2.0 }
    }
}

fn check_target(target: &TensorD, n: usize) -> Result<()> {
    if target.len() != n {
        return Err(Error::Validation(format!(
            "target has {} entries for {n} classes",
            target.len()
        )));
    }
    if target.values().iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::Validation("target probabilities must be non-negative".into()));
    }
    let s: f64 = target.values().iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("target sums to {s}, not 1")));
    }
    Ok(())
}

pub fn one_hot(class: usize, classes: usize) -> Result<TensorD> {
    if class >= classes {
        return Err(Error::Validation(format!(
            "class {class} out of range for {classes} classes"
        )));
    }
    Ok(TensorD::from_fn(&[classes], |i| if i == class { 1.0 } else { 0.0 }))
}

/// Loss value and its gradient with respect to `pred`. Clamped coordinates
/// get zero gradient.
pub fn focal_loss_with_grad(pred: &TensorD, target: &TensorD, gamma: f64) -> Result<(f64, TensorD)> {
    check_target(target, pred.len())?;
    if !(gamma >= 0.0) {
        return Err(Error::Validation(format!("gamma {gamma} must be non-negative")));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (i, (&y_raw, &p)) in pred.values().iter().zip(target.values()).enumerate() {
        if p == 0.0 {
            continue;
        }
        let y = y_raw.clamp(PRED_EPS, 1.0 - PRED_EPS);
        let q = 1.0 - y;
        let w = q.powf(gamma);
        loss -= w * p * y.ln();
        if y == y_raw {
            let dw = if gamma == 0.0 {
                0.0
            } else {
                -gamma * q.powf(gamma - 1.0)
            };
            grad[i] = -p * (dw * y.ln() + w / y);
        }
    }
    Ok((loss, TensorD::new(pred.shape().to_vec(), grad)?))
}

pub fn focal_loss(pred: &TensorD, target: &TensorD, gamma: f64) -> Result<f64> {
    Ok(focal_loss_with_grad(pred, target, gamma)?.0)
}

/// Rescales sigmoid scores to sum to one.
pub fn normalize_scores(scores: &TensorD) -> Result<TensorD> {
    let s = scores.sum();
    if !(s > 0.0) {
        return Err(Error::Numeric(format!("score sum {s} cannot be normalized")));
    }
    Ok(scores.scale(1.0 / s))
}

/// Training objective on raw sigmoid scores. With `normalize`, the loss is
/// taken on the scores rescaled to a distribution; otherwise on the scores
/// directly. Returns the loss and its gradient with respect to the scores.
pub fn score_loss(scores: &TensorD, target: &TensorD, gamma: f64, normalize: bool) -> Result<(f64, TensorD)> {
    if !normalize {
        return focal_loss_with_grad(scores, target, gamma);
    }
    let s = scores.sum();
    let q = normalize_scores(scores)?;
    let (loss, gq) = focal_loss_with_grad(&q, target, gamma)?;
    let inner: f64 = gq.values().iter().zip(q.values()).map(|(g, q)| g * q).sum();
    let grad = gq.values().iter().map(|g| (g - inner) / s).collect();
    Ok((loss, TensorD::new(scores.shape().to_vec(), grad)?))
}
