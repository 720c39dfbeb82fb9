//! Batch losses over logits: cross-entropy (with optional label smoothing)
//! and mean squared error against one-hot targets. Both are means over the
//! batch, so duplicating every example leaves values and gradients unchanged.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy {
        #[serde(default)]
        smoothing: f64,
    },
    Mse,
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::CrossEntropy { smoothing: 0.0 }
    }
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        if let LossKind::CrossEntropy { smoothing } = self {
            if !(0.0..1.0).contains(smoothing) {
                return Err(Error::Input(format!(
                    "label smoothing must lie in [0, 1), got {smoothing}"
                )));
            }
        }
        Ok(())
    }
}

fn check_shapes(logits: &[f64], labels: &[usize], classes: usize) -> Result<usize> {
    if classes == 0 || logits.len() != labels.len() * classes {
        return Err(Error::Config(format!(
            "logit buffer of {} values does not match {} labels x {} classes",
            logits.len(),
            labels.len(),
            classes
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Input(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(labels.len())
}

/// Mean batch loss.
pub fn loss(logits: &[f64], labels: &[usize], classes: usize, kind: LossKind) -> Result<f64> {
    Ok(loss_and_grad(logits, labels, classes, kind)?.0)
}

/// Mean batch loss together with its gradient w.r.t. the logits.
pub fn loss_and_grad(
    logits: &[f64],
    labels: &[usize],
    classes: usize,
    kind: LossKind,
) -> Result<(f64, Vec<f64>)> {
    kind.validate()?;
    let n = check_shapes(logits, labels, classes)?;
    if n == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    let mut grad = vec![0.0; logits.len()];
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;

    match kind {
        LossKind::CrossEntropy { smoothing } => {
            let uniform = smoothing / classes as f64;
            for (b, &y) in labels.iter().enumerate() {
                let row = &logits[b * classes..(b + 1) * classes];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
                // target distribution: (1 - s) one-hot + s / k uniform
                let mut row_loss = 0.0;
                for (c, &l) in row.iter().enumerate() {
                    let target = uniform + if c == y { 1.0 - smoothing } else { 0.0 };
                    let log_p = l - lse;
                    row_loss -= target * log_p;
                    grad[b * classes + c] = ((l - lse).exp() - target) * inv_n;
                }
                total += row_loss;
            }
        }
        LossKind::Mse => {
            for (b, &y) in labels.iter().enumerate() {
                for c in 0..classes {
                    let target = if c == y { 1.0 } else { 0.0 };
                    let diff = logits[b * classes + c] - target;
                    total += diff * diff;
                    grad[b * classes + c] = 2.0 * diff * inv_n;
                }
            }
        }
    }
    Ok((total * inv_n, grad))
}

/// Row-wise softmax (numerically stable).
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (row, dst) in logits.chunks(classes).zip(out.chunks_mut(classes)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, &l) in dst.iter_mut().zip(row) {
            *d = (l - max).exp();
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    out
}
