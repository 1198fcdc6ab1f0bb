//! Orthogonal low-rank embedding loss on a labeled minibatch of latents.
//!
//! For latents `Y` (one column per example) partitioned by class into `Y_c`,
//!
//! ```text
//! L(Y) = Σ_c max(Δ, ‖Y_c‖_*) − ‖Y‖_*
//! ```
//!
//! Minimizing it pulls each class onto a low-rank subspace while keeping the
//! classes spread across mutually orthogonal directions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OleConfig {
    /// Floor `Δ` on each per-class nuclear norm.
    pub delta_margin: f64,
    /// Singular values at or below this threshold are excluded from subgradients.
    pub sv_threshold: f64,
}

impl Default for OleConfig {
    fn default() -> Self {
        OleConfig {
            delta_margin: 1.0,
            sv_threshold: 1e-3,
        }
    }
}

impl OleConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("delta_margin", self.delta_margin),
            ("sv_threshold", self.sv_threshold),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Latent matrix (`d × m`, one column per example) with a class label per column.
#[derive(Debug, Clone)]
pub struct LabeledLatentBatch {
    latents: Matrix,
    labels: Vec<usize>,
}

impl LabeledLatentBatch {
    pub fn new(latents: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != latents.cols() {
            return Err(Error::Shape(format!(
                "{} labels for {} latent columns",
                labels.len(),
                latents.cols()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabeledLatentBatch { latents, labels })
    }

    pub fn latents(&self) -> &Matrix {
        &self.latents
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// One class's slice of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBlock {
    pub label: usize,
    /// Original column indices, in batch order.
    pub columns: Vec<usize>,
    pub latents: Matrix,
}

/// Splits a batch by label, ordered by label; classes absent from the batch
/// get no entry.
pub fn partition_by_class(batch: &LabeledLatentBatch) -> Vec<ClassBlock> {
    let mut present: Vec<usize> = batch.labels.clone();
    present.sort_unstable();
    present.dedup();
    present
        .into_iter()
        .map(|label| {
            let columns: Vec<usize> = batch
                .labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == label)
                .map(|(j, _)| j)
                .collect();
            let latents = batch.latents.select_columns(&columns);
            ClassBlock {
                label,
                columns,
                latents,
            }
        })
        .collect()
}

pub fn ole_loss(batch: &LabeledLatentBatch, cfg: &OleConfig) -> Result<f64> {
    cfg.validate()?;
    let mut loss = 0.0;
    for block in partition_by_class(batch) {
        loss += cfg.delta_margin.max(linalg::nuclear_norm(&block.latents)?);
    }
    Ok(loss - linalg::nuclear_norm(&batch.latents)?)
}

/// Descent direction of [`ole_loss`] with respect to the latents.
///
/// Each class whose nuclear norm exceeds the margin contributes its own
/// thresholded subgradient, scattered back into that class's columns; the
/// full-batch subgradient is subtracted everywhere.
pub fn ole_grad(batch: &LabeledLatentBatch, cfg: &OleConfig) -> Result<Matrix> {
    Ok(ole_loss_and_grad(batch, cfg)?.1)
}

/// Loss and gradient sharing one SVD per block.
pub fn ole_loss_and_grad(batch: &LabeledLatentBatch, cfg: &OleConfig) -> Result<(f64, Matrix)> {
    cfg.validate()?;
    let (d, m) = batch.latents.shape();
    let mut grad = Matrix::zeros(d, m);
    let mut loss = 0.0;
    for block in partition_by_class(batch) {
        let svd = linalg::svd(&block.latents)?;
        let norm: f64 = svd.singular_values.iter().sum();
        loss += cfg.delta_margin.max(norm);
        if norm > cfg.delta_margin {
            let g = linalg::subgradient_from_svd(&svd, cfg.sv_threshold);
            for (k, &j) in block.columns.iter().enumerate() {
                for i in 0..d {
                    grad[(i, j)] = g[(i, k)];
                }
            }
        }
    }
    let svd = linalg::svd(&batch.latents)?;
    loss -= svd.singular_values.iter().sum::<f64>();
    let full = linalg::subgradient_from_svd(&svd, cfg.sv_threshold);
    Ok((loss, grad.sub(&full)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(cols: &[Vec<f64>], labels: &[usize], classes: usize) -> LabeledLatentBatch {
        LabeledLatentBatch::new(
            Matrix::from_columns(cols).unwrap(),
            labels.to_vec(),
            classes,
        )
        .unwrap()
    }

    fn e(i: usize, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn partition_examples() {
        let b = batch(
            &[e(0, 2), e(1, 2), vec![2.0, 0.0], vec![0.0, 3.0]],
            &[0, 1, 0, 1],
            3,
        );
        let parts = partition_by_class(&b);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].columns, vec![0, 2]);
        assert_eq!(parts[1].columns, vec![1, 3]);
        assert_eq!(
            parts[1].latents,
            Matrix::from_columns(&[e(1, 2), vec![0.0, 3.0]]).unwrap()
        );

        let single = batch(&[e(0, 2), e(1, 2)], &[2, 2], 3);
        let parts = partition_by_class(&single);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].latents, *single.latents());
    }

    #[test]
    fn batch_validation() {
        assert!(LabeledLatentBatch::new(Matrix::zeros(2, 3), vec![0, 1], 2).is_err());
        assert!(LabeledLatentBatch::new(Matrix::zeros(2, 2), vec![0, 2], 2).is_err());
        let bad = OleConfig {
            delta_margin: -1.0,
            sv_threshold: 0.0,
        };
        assert!(ole_loss(&batch(&[e(0, 2)], &[0], 1), &bad).is_err());
    }

    #[test]
    fn zero_batch_three_classes() {
        let b = LabeledLatentBatch::new(Matrix::zeros(4, 6), vec![0, 1, 2, 0, 1, 2], 3).unwrap();
        let cfg = OleConfig {
            delta_margin: 1.0,
            sv_threshold: 1e-3,
        };
        assert_eq!(ole_loss(&b, &cfg).unwrap(), 3.0);
        assert_eq!(ole_grad(&b, &cfg).unwrap(), Matrix::zeros(4, 6));
    }

    #[test]
    fn orthogonal_classes_have_zero_loss() {
        let b = batch(&[e(0, 4), e(1, 4), e(2, 4), e(3, 4)], &[0, 0, 1, 1], 2);
        let cfg = OleConfig {
            delta_margin: 0.0,
            sv_threshold: 1e-6,
        };
        assert!(ole_loss(&b, &cfg).unwrap().abs() < 1e-12);
    }

    #[test]
    fn identical_columns_two_classes() {
        let u = vec![0.0, 0.6, 0.8];
        let b = batch(&[u.clone(), u], &[0, 1], 2);
        let cfg = OleConfig {
            delta_margin: 0.0,
            sv_threshold: 1e-6,
        };
        let loss = ole_loss(&b, &cfg).unwrap();
        assert!((loss - (2.0 - 2f64.sqrt())).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn single_class_gradient_cancels() {
        let b = batch(
            &[
                vec![1.0, 2.0, 0.5],
                vec![-0.3, 0.1, 2.0],
                vec![0.7, 0.7, 0.1],
            ],
            &[1, 1, 1],
            2,
        );
        let cfg = OleConfig {
            delta_margin: 0.0,
            sv_threshold: 1e-12,
        };
        let g = ole_grad(&b, &cfg).unwrap();
        assert_eq!(g, Matrix::zeros(3, 3));
    }

    #[test]
    fn inactive_hinge_leaves_only_batch_term() {
        let b = batch(&[vec![0.1, 0.0], vec![0.0, 0.1]], &[0, 1], 2);
        let cfg = OleConfig {
            delta_margin: 1.0,
            sv_threshold: 1e-6,
        };
        let g = ole_grad(&b, &cfg).unwrap();
        assert!(g.max_abs_diff(&Matrix::identity(2).scale(-1.0)) < 1e-12);
        assert!((ole_loss(&b, &cfg).unwrap() - 1.8).abs() < 1e-12);
    }
}
