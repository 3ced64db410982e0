//! Softmax cross-entropy, computed through a numerically stable log-softmax.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Breakdown of one sample's loss: l = −Σ_c y_c·log p_c with one-hot y.
#[derive(Debug, Clone)]
pub struct LossRecord {
    /// Softmax probabilities; strictly positive, sum to 1.
    pub probabilities: Vec<f64>,
    pub target: usize,
    pub classes: usize,
    pub loss: f64,
}

fn log_softmax(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let log_p: Vec<f64> = logits.iter().map(|z| z - max - log_sum).collect();
    let p = log_p.iter().map(|lp| lp.exp()).collect();
    (log_p, p)
}

/// Cross-entropy of a single sample's logits.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<LossRecord> {
    let classes = logits.len();
    if classes < 2 {
        return Err(Error::Shape(format!("need at least 2 classes, got {classes}")));
    }
    if target >= classes {
        return Err(Error::Index(format!(
            "class index {target} out of range for {classes} classes"
        )));
    }
    let (log_p, p) = log_softmax(logits);
    Ok(LossRecord { probabilities: p, target, classes, loss: -log_p[target] })
}

/// Mean cross-entropy over a batch of logits plus the logits gradient
/// (softmax − one-hot, scaled by 1/N for the mean).
pub fn cross_entropy_batch(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    let (n, classes) = logits.dims2()?;
    if targets.len() != n {
        return Err(Error::Shape(format!(
            "{} targets for a batch of {n} samples",
            targets.len()
        )));
    }
    if n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for sample in 0..n {
        let row = &logits.data()[sample * classes..(sample + 1) * classes];
        let record = cross_entropy(row, targets[sample])?;
        total += record.loss;
        let grow = &mut grad.data_mut()[sample * classes..(sample + 1) * classes];
        for (c, &p) in record.probabilities.iter().enumerate() {
            grow[c] = (p - if c == record.target { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}
