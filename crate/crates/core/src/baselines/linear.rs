use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView2;

use super::{check_width, class_counts, label_of_score, BaselineError, Result};
use crate::checkpoint::{Checkpoint, Tensor};
use crate::corpus::StanceLabel;

/// Ridge least-squares classifier on ±1 targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
}

/// Minimizes `‖Xw + b − y‖² + λ‖w‖²` with `y ∈ {−1, +1}` and an
/// unpenalized bias, by solving `(XcᵀXc + λI)w = Xcᵀyc` on centered data.
/// With `λ = 0` the minimum-norm least-squares solution is returned.
pub fn fit_linear(x: ArrayView2<f64>, y: &[StanceLabel], lambda: f64) -> Result<LinearModel> {
    if !(lambda >= 0.0) {
        return Err(BaselineError::NegativeRidge(lambda));
    }
    class_counts(x.nrows(), y)?;
    let (n, d) = x.dim();
    let targets: Vec<f64> = y.iter().map(|l| l.sign()).collect();
    let y_mean = targets.iter().sum::<f64>() / n as f64;
    let x_mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    let xc = DMatrix::from_fn(n, d, |i, j| x[[i, j]] - x_mean[j]);
    let yc = DVector::from_iterator(n, targets.iter().map(|t| t - y_mean));

    let mut gram = xc.transpose() * &xc;
    for j in 0..d {
        gram[(j, j)] += lambda;
    }
    let rhs = xc.transpose() * yc;
    let w = if lambda > 0.0 {
        gram.cholesky().ok_or(BaselineError::Singular)?.solve(&rhs)
    } else {
        gram.svd(true, true).solve(&rhs, 1e-12).map_err(|_| BaselineError::Singular)?
    };
    let bias = y_mean - w.iter().zip(&x_mean).map(|(a, b)| a * b).sum::<f64>();
    Ok(LinearModel { weights: w.iter().copied().collect(), bias, lambda })
}

impl LinearModel {
    pub fn decision(&self, row: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(row).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<StanceLabel>> {
        check_width(self.weights.len(), &x)?;
        Ok(x.rows().into_iter().map(|r| label_of_score(self.decision(&r.to_vec()))).collect())
    }

    pub(super) fn write_to(&self, ckpt: &mut Checkpoint) -> Result<()> {
        ckpt.set("lambda", self.lambda);
        ckpt.set("n_features", self.weights.len());
        ckpt.push(Tensor::f64("weights", vec![self.weights.len()], self.weights.clone())?);
        ckpt.push(Tensor::f64("bias", vec![1], vec![self.bias])?);
        Ok(())
    }

    pub(super) fn read_from(ckpt: &Checkpoint) -> Result<Self> {
        let d: usize = ckpt.parse("n_features")?;
        Ok(LinearModel {
            weights: ckpt.f64_tensor("weights", &[d])?.to_vec(),
            bias: ckpt.f64_tensor("bias", &[1])?[0],
            lambda: ckpt.parse("lambda")?,
        })
    }
}
