//! Scalar losses with their gradients. Every loss is averaged over the batch;
//! accumulation is in `f64`.

use super::layers::sigmoid;
use super::tensor::Tensor4;
use crate::error::{Error, Result};

fn same_shape(a: &Tensor4, b: &Tensor4) -> Result<()> {
    if a.batch() != b.batch() || a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "loss operands {}x{} and {}x{}",
            a.batch(),
            a.shape(),
            b.batch(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean squared error over every element, and its gradient in `pred`.
pub fn mse(pred: &Tensor4, target: &Tensor4) -> Result<(f64, Tensor4)> {
    same_shape(pred, target)?;
    let n = pred.data().len().max(1);
    let mut loss = 0.0f64;
    let mut grad = Tensor4::zeros(pred.batch(), pred.shape());
    for ((g, &p), &t) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(target.data())
    {
        let d = p - t;
        loss += (d as f64) * (d as f64);
        *g = 2.0 * d / n as f32;
    }
    Ok((loss / n as f64, grad))
}

/// Squared L2 distance per example, averaged over the batch.
pub fn squared_error(pred: &Tensor4, target: &Tensor4) -> Result<(f64, Tensor4)> {
    let (loss, mut grad) = mse(pred, target)?;
    let per_example = pred.shape().len() as f64;
    grad.scale(per_example as f32);
    Ok((loss * per_example, grad))
}

/// Binary cross-entropy of `sigmoid(logit)` against a constant target.
pub fn bce_logit(logits: &Tensor4, target: f32) -> Result<(f64, Tensor4)> {
    if logits.shape().len() != 1 {
        return Err(Error::Shape(format!(
            "bce expects one logit per example, got {}",
            logits.shape()
        )));
    }
    let n = logits.batch().max(1);
    let t = target as f64;
    let mut loss = 0.0f64;
    let mut grad = Tensor4::zeros(logits.batch(), logits.shape());
    for (g, &l) in grad.data_mut().iter_mut().zip(logits.data()) {
        let l64 = l as f64;
        // log(1 + e^l) − t·l, written to avoid overflow.
        loss += l64.max(0.0) - t * l64 + (-l64.abs()).exp().ln_1p();
        *g = (sigmoid(l) - target) / n as f32;
    }
    Ok((loss / n as f64, grad))
}

/// Softmax cross-entropy of per-example logits against integer labels.
pub fn cross_entropy(logits: &Tensor4, labels: &[usize]) -> Result<(f64, Tensor4)> {
    let classes = logits.shape().len();
    if labels.len() != logits.batch() {
        return Err(Error::Shape(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.batch()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Config(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let n = logits.batch().max(1);
    let mut loss = 0.0f64;
    let mut grad = Tensor4::zeros(logits.batch(), logits.shape());
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.example(i);
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[label] as f64;
        let g = grad.example_mut(i);
        for (k, (gk, &v)) in g.iter_mut().zip(row).enumerate() {
            let p = (v as f64 - lse).exp();
            let onehot = if k == label { 1.0 } else { 0.0 };
            *gk = ((p - onehot) / n as f64) as f32;
        }
    }
    Ok((loss / n as f64, grad))
}
