use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Confusion counts and per-class scores. Any 0/0 ratio is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision_1: f64,
    pub recall_1: f64,
    pub f1_1: f64,
    pub precision_0: f64,
    pub recall_0: f64,
    pub f1_0: f64,
}

impl Metrics {
    pub fn n(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 { 0.0 } else { a as f64 / b as f64 }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }
}

pub fn f1_per_class(preds: &[u8], labels: &[u8]) -> Result<Metrics> {
    if preds.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::validation("no predictions to score"));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &y) in preds.iter().zip(labels) {
        match (p != 0, y != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let precision_1 = ratio(tp, tp + fp);
    let recall_1 = ratio(tp, tp + fn_);
    let precision_0 = ratio(tn, tn + fn_);
    let recall_0 = ratio(tn, tn + fp);
    Ok(Metrics {
        tp,
        fp,
        fn_,
        tn,
        precision_1,
        recall_1,
        f1_1: f1(precision_1, recall_1),
        precision_0,
        recall_0,
        f1_0: f1(precision_0, recall_0),
    })
}

/// Argmax with ties going to label 0.
pub fn argmax_labels(probs: &[[f64; 2]]) -> Vec<u8> {
    probs.iter().map(|p| u8::from(p[1] > p[0])).collect()
}

/// `(a / b - 1)` in percent.
pub fn relative_improvement(a: f64, b: f64) -> f64 {
    (a / b - 1.0) * 100.0
}
