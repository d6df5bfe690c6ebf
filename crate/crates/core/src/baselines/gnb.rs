use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1, ArrayView2};

use super::{check_width, class_counts, BaselineError, Result};
use crate::checkpoint::{Checkpoint, Tensor};
use crate::corpus::StanceLabel;

/// Lower bound applied to every per-class feature variance.
pub const VARIANCE_FLOOR: f64 = 1e-9;

/// Gaussian naive Bayes with maximum-likelihood moments.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNb {
    pub priors: [f64; 2],
    /// `2 × d`, row = class index.
    pub means: Array2<f64>,
    pub variances: Array2<f64>,
}

pub fn fit_gnb(x: ArrayView2<f64>, y: &[StanceLabel]) -> Result<GaussianNb> {
    let counts = class_counts(x.nrows(), y)?;
    for label in StanceLabel::ALL {
        if counts[label.index()] < 2 {
            return Err(BaselineError::TooFewSamples(label));
        }
    }
    let d = x.ncols();
    let mut means = Array2::<f64>::zeros((2, d));
    let mut variances = Array2::<f64>::zeros((2, d));
    for (row, l) in x.rows().into_iter().zip(y) {
        let mut m = means.row_mut(l.index());
        m += &row;
    }
    for c in 0..2 {
        let mut m = means.row_mut(c);
        m /= counts[c] as f64;
    }
    for (row, l) in x.rows().into_iter().zip(y) {
        let c = l.index();
        for j in 0..d {
            variances[[c, j]] += (row[j] - means[[c, j]]).powi(2);
        }
    }
    for c in 0..2 {
        for j in 0..d {
            variances[[c, j]] = (variances[[c, j]] / counts[c] as f64).max(VARIANCE_FLOOR);
        }
    }
    let n = y.len() as f64;
    Ok(GaussianNb { priors: [counts[0] as f64 / n, counts[1] as f64 / n], means, variances })
}

impl GaussianNb {
    pub fn n_features(&self) -> usize {
        self.means.ncols()
    }

    /// `log P(c) + Σⱼ log N(xⱼ; μ_cj, σ²_cj)` for both classes.
    pub fn log_joint(&self, row: ArrayView1<f64>) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (c, slot) in out.iter_mut().enumerate() {
            let mut s = self.priors[c].ln();
            for j in 0..row.len() {
                let var = self.variances[[c, j]];
                s -= 0.5 * (2.0 * PI * var).ln() + (row[j] - self.means[[c, j]]).powi(2) / (2.0 * var);
            }
            *slot = s;
        }
        out
    }

    /// Normalized class posteriors.
    pub fn posteriors(&self, row: ArrayView1<f64>) -> [f64; 2] {
        let [a, p] = self.log_joint(row);
        let m = a.max(p);
        let (ea, ep) = ((a - m).exp(), (p - m).exp());
        [ea / (ea + ep), ep / (ea + ep)]
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<StanceLabel>> {
        check_width(self.n_features(), &x)?;
        Ok(x.rows()
            .into_iter()
            .map(|r| {
                let [a, p] = self.log_joint(r);
                if p > a {
                    StanceLabel::Pro
                } else {
                    StanceLabel::Anti
                }
            })
            .collect())
    }

    pub(super) fn write_to(&self, ckpt: &mut Checkpoint) -> Result<()> {
        let d = self.n_features();
        ckpt.set("n_features", d);
        ckpt.push(Tensor::f64("priors", vec![2], self.priors.to_vec())?);
        ckpt.push(Tensor::f64("means", vec![2, d], self.means.iter().copied().collect())?);
        ckpt.push(Tensor::f64("variances", vec![2, d], self.variances.iter().copied().collect())?);
        Ok(())
    }

    pub(super) fn read_from(ckpt: &Checkpoint) -> Result<Self> {
        let d: usize = ckpt.parse("n_features")?;
        let p = ckpt.f64_tensor("priors", &[2])?;
        let grid = |name| -> Result<Array2<f64>> {
            Ok(Array2::from_shape_vec((2, d), ckpt.f64_tensor(name, &[2, d])?.to_vec()).expect("shape checked"))
        };
        Ok(GaussianNb { priors: [p[0], p[1]], means: grid("means")?, variances: grid("variances")? })
    }
}
