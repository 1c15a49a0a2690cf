//! Challenge scoring: confusion matrix, sensitivity, specificity and the
//! average, harmonic and total scores.

mod metrics;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{consistency_check, score, score_matrix, ConfusionMatrix, ScoreReport};

use crate::dataio::Label;
use crate::error::{Error, Result};
use crate::model::{forward, ModelInput, WlannConfig, WlannParams};
use crate::train::{argmax, Example};

/// Predicted label and per-class scores for one prepared input.
pub fn predict(input: &ModelInput, params: &WlannParams, cfg: &WlannConfig) -> Result<(Label, Vec<f64>)> {
    let scores = forward(input, params, cfg)?;
    let k = argmax(&scores);
    let label = Label::from_index(k).ok_or_else(|| Error::Config(format!("class index {k} has no label")))?;
    Ok((label, scores.into_values()))
}

/// Deterministic inference over `examples` followed by scoring.
pub fn evaluate(params: &WlannParams, cfg: &WlannConfig, examples: &[Example], split: &str) -> Result<ScoreReport> {
    if examples.is_empty() {
        return Err(Error::EmptyInput(format!("split '{split}' has no events")));
    }
    let preds: Vec<Result<Label>> = examples
        .par_iter()
        .map(|ex| predict(&ex.input, params, cfg).map(|(l, _)| l))
        .collect();
    let pairs = examples
        .iter()
        .zip(preds)
        .map(|(ex, p)| p.map(|p| (ex.label, p)))
        .collect::<Result<Vec<_>>>()?;
    score_matrix(ConfusionMatrix::from_pairs(&pairs), split)
}

/// Report file contents: the scores plus the configuration that produced
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub report: ScoreReport,
    pub config: WlannConfig,
}

pub fn write_report(path: impl AsRef<Path>, report: &ScoreReport, cfg: &WlannConfig) -> Result<()> {
    let path = path.as_ref();
    let doc = ReportDocument {
        report: report.clone(),
        config: cfg.clone(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
