use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Accuracy and macro-averaged F1 over classes `0..n_classes`. A class
/// with no true or predicted members scores F1 = 0 and still counts in
/// the average.
pub fn metrics(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::invalid("metrics", format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if pred.is_empty() || n_classes == 0 {
        return Err(Error::invalid("metrics", "empty input"));
    }
    if let Some(&l) = pred.iter().chain(truth).find(|&&l| l >= n_classes) {
        return Err(Error::invalid("metrics", format!("label {l} outside {n_classes} classes")));
    }
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    let mut correct = 0;
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let f1_sum: f64 = (0..n_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(Metrics { accuracy: correct as f64 / pred.len() as f64, macro_f1: f1_sum / n_classes as f64 })
}
