use serde::{Deserialize, Serialize};

use crate::dataio::{Label, NUM_CLASSES};
use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_pairs(pairs: &[(Label, Label)]) -> Self {
        let mut m = Self::default();
        for &(t, p) in pairs {
            m.counts[t.index()][p.index()] += 1;
        }
        m
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    pub fn diagonal(&self, class: usize) -> usize {
        self.counts[class][class]
    }
}

/// Challenge scores of one evaluation. Ratios with an empty denominator are
/// `None` and named in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub split: String,
    pub events: usize,
    pub sn: Option<f64>,
    pub sp: Option<f64>,
    #[serde(rename = "as")]
    pub as_: Option<f64>,
    pub hs: Option<f64>,
    pub ts: Option<f64>,
    /// Correctly classified abnormal events (exact class match).
    pub cas: usize,
    /// Abnormal events.
    pub tas: usize,
    /// Normal events predicted normal.
    pub cns: usize,
    /// Normal events.
    pub tns: usize,
    pub accuracy: f64,
    /// Abnormal events predicted as any abnormal class, over `tas`.
    pub binary_sn: Option<f64>,
    pub per_class_recall: Vec<Option<f64>>,
    pub undefined: Vec<String>,
    pub confusion: ConfusionMatrix,
}

/// Average, harmonic and total score from sensitivity and specificity.
pub fn consistency_check(sn: f64, sp: f64) -> (f64, f64, f64) {
    let avg = (sn + sp) / 2.0;
    // at sn == sp the quotient can round one ulp above the mean
    let hs = if sn + sp > 0.0 {
        (2.0 * sn * sp / (sn + sp)).min(avg)
    } else {
        0.0
    };
    (avg, hs, (avg + hs) / 2.0)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn score_matrix(confusion: ConfusionMatrix, split: &str) -> Result<ScoreReport> {
    let n = confusion.total();
    if n == 0 {
        return Err(Error::EmptyInput(format!("no events to score in split '{split}'")));
    }
    let normal = Label::Normal.index();
    let tns = confusion.row_sum(normal);
    let cns = confusion.diagonal(normal);
    let abnormal: Vec<usize> = Label::ALL
        .iter()
        .filter(|l| l.is_abnormal())
        .map(|l| l.index())
        .collect();
    let tas: usize = abnormal.iter().map(|&c| confusion.row_sum(c)).sum();
    let cas: usize = abnormal.iter().map(|&c| confusion.diagonal(c)).sum();
    let detected: usize = abnormal
        .iter()
        .map(|&c| abnormal.iter().map(|&p| confusion.counts[c][p]).sum::<usize>())
        .sum();
    let sn = ratio(cas, tas);
    let sp = ratio(cns, tns);
    let mut undefined = Vec::new();
    if sn.is_none() {
        undefined.push("sn: no abnormal events".to_string());
    }
    if sp.is_none() {
        undefined.push("sp: no normal events".to_string());
    }
    let derived = sn.zip(sp).map(|(a, b)| consistency_check(a, b));
    if derived.is_none() {
        undefined.push("as/hs/ts: need both sn and sp".to_string());
    }
    let correct: usize = (0..NUM_CLASSES).map(|c| confusion.diagonal(c)).sum();
    Ok(ScoreReport {
        split: split.to_string(),
        events: n,
        sn,
        sp,
        as_: derived.map(|d| d.0),
        hs: derived.map(|d| d.1),
        ts: derived.map(|d| d.2),
        cas,
        tas,
        cns,
        tns,
        accuracy: correct as f64 / n as f64,
        binary_sn: ratio(detected, tas),
        per_class_recall: (0..NUM_CLASSES)
            .map(|c| ratio(confusion.diagonal(c), confusion.row_sum(c)))
            .collect(),
        undefined,
        confusion,
    })
}

/// Scores `(true, predicted)` label pairs.
pub fn score(pairs: &[(Label, Label)]) -> Result<ScoreReport> {
    score_matrix(ConfusionMatrix::from_pairs(pairs), "")
}
