use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

/// Mean squared error over every element; the target is a constant.
pub fn mse_loss(tape: &mut Tape, pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape { op: "mse_loss", lhs: pred.shape(), rhs: target.shape() });
    }
    if pred.is_empty() {
        return Err(Error::invalid("mse_loss", "empty input"));
    }
    let n = pred.len() as f64;
    let diff: Vec<f64> = pred.data().iter().zip(target.data()).map(|(p, t)| p - t).collect();
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
    tape.custom(
        "mse_loss",
        &[pred],
        (1, 1),
        vec![value],
        Box::new(move |g, _| vec![Some(diff.iter().map(|d| g[0] * 2.0 * d / n).collect())]),
    )
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`,
/// computed through a stable log-sum-exp.
pub fn cross_entropy(tape: &mut Tape, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, c) = logits.shape();
    if labels.len() != b {
        return Err(Error::Shape { op: "cross_entropy", lhs: logits.shape(), rhs: (labels.len(), 1) });
    }
    if b == 0 || c == 0 {
        return Err(Error::invalid("cross_entropy", "empty input"));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::invalid("cross_entropy", format!("label {l} outside {c} classes")));
    }
    let mut probs = vec![0.0; b * c];
    let mut total = 0.0;
    for r in 0..b {
        let row = logits.row_slice(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|z| (z - m).exp()).sum();
        let lse = m + s.ln();
        total += lse - row[labels[r]];
        for j in 0..c {
            probs[r * c + j] = (row[j] - lse).exp();
        }
    }
    let labels = labels.to_vec();
    tape.custom(
        "cross_entropy",
        &[logits],
        (1, 1),
        vec![total / b as f64],
        Box::new(move |g, _| {
            let scale = g[0] / b as f64;
            let mut gx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
            for (r, &l) in labels.iter().enumerate() {
                gx[r * c + l] -= scale;
            }
            vec![Some(gx)]
        }),
    )
}

/// Index of the largest entry in every row (first on ties).
pub fn argmax_rows(x: &Tensor) -> Vec<usize> {
    (0..x.rows())
        .map(|r| {
            let row = x.row_slice(r);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
