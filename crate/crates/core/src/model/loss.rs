use ndarray::{Array2, ArrayView2, Axis};

use super::{ModelError, Result, Scalar, NUM_CLASSES};
use crate::corpus::StanceLabel;

/// Probability clamp applied inside the cross-entropy logarithms.
pub const BCE_EPS: f64 = 1e-7;

/// Max-subtracted softmax of one logit vector.
pub fn softmax<F: Scalar>(z: &[F]) -> Vec<F> {
    let max = z.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().copied().fold(F::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Row-wise softmax of a logit batch.
pub fn softmax_rows<F: Scalar>(z: ArrayView2<F>) -> Array2<F> {
    let mut out = z.to_owned();
    for mut row in out.rows_mut() {
        let p = softmax(row.as_slice().expect("owned rows are contiguous"));
        row.iter_mut().zip(p).for_each(|(r, v)| *r = v);
    }
    out
}

pub fn one_hot<F: Scalar>(labels: &[StanceLabel]) -> Array2<F> {
    let mut y = Array2::zeros((labels.len(), NUM_CLASSES));
    for (i, l) in labels.iter().enumerate() {
        y[[i, l.index()]] = F::one();
    }
    y
}

/// Mean over rows of `−Σᵢ [yᵢ ln ŷᵢ + (1−yᵢ) ln(1−ŷᵢ)]`, with each ŷᵢ clamped
/// to `[ε, 1−ε]`.
pub fn bce_loss<F: Scalar>(y: ArrayView2<F>, probs: ArrayView2<F>) -> Result<F> {
    if y.dim() != probs.dim() {
        return Err(ModelError::Shape(format!("targets {:?} vs probabilities {:?}", y.dim(), probs.dim())));
    }
    let rows = y.nrows();
    if rows == 0 {
        return Ok(F::zero());
    }
    let eps = F::from_f64_lossy(BCE_EPS);
    let one = F::one();
    let mut total = F::zero();
    for (yi, pi) in y.iter().zip(probs.iter()) {
        let p = pi.max(eps).min(one - eps);
        total = total - (*yi * p.ln() + (one - *yi) * (one - p).ln());
    }
    Ok(total / F::from_usize(rows).unwrap())
}

pub fn bce_loss_labels<F: Scalar>(labels: &[StanceLabel], probs: ArrayView2<F>) -> Result<F> {
    bce_loss(one_hot::<F>(labels).view(), probs)
}

/// Loss and its gradient with respect to the logits, for a batch whose
/// targets are `labels`.
pub(crate) fn loss_and_logit_grad<F: Scalar>(
    logits: ArrayView2<F>,
    labels: &[StanceLabel],
) -> Result<(F, Array2<F>)> {
    let probs = softmax_rows(logits);
    let y = one_hot::<F>(labels);
    let loss = bce_loss(y.view(), probs.view())?;

    let eps = F::from_f64_lossy(BCE_EPS);
    let one = F::one();
    let inv_rows = one / F::from_usize(labels.len()).unwrap();
    // dL/dŷ, zero where the clamp is active
    let mut dprob = Array2::zeros(probs.dim());
    ndarray::Zip::from(&mut dprob).and(&probs).and(&y).for_each(|d, &p, &t| {
        if p > eps && p < one - eps {
            *d = inv_rows * ((one - t) / (one - p) - t / p);
        }
    });
    // softmax Jacobian: dz_j = p_j (d_j − Σ_i d_i p_i)
    let inner = (&dprob * &probs).sum_axis(Axis(1)).insert_axis(Axis(1));
    let dz = &probs * &(&dprob - &inner);
    Ok((loss, dz))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0f64, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax(&[1000.0f32, 0.0]);
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn bce_examples() {
        let l = bce_loss(array![[1.0f64, 0.0]].view(), array![[0.5, 0.5]].view()).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 1.386294).abs() < 1e-6);

        let perfect = bce_loss(array![[1.0f64, 0.0]].view(), array![[1.0, 0.0]].view()).unwrap();
        assert!(perfect < 3e-7);

        let worst = bce_loss(array![[0.0f64, 1.0]].view(), array![[1.0, 0.0]].view()).unwrap();
        assert!((worst - 2.0 * -(1e-7f64).ln()).abs() < 1e-6);
        assert!((worst - 32.236).abs() < 1e-2);
    }

    #[test]
    fn bce_shape_mismatch() {
        assert!(bce_loss(array![[1.0f64, 0.0]].view(), array![[0.5, 0.5], [0.5, 0.5]].view()).is_err());
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let z = array![[0.3f64, -1.2], [2.0, 0.5], [-0.7, -0.1]];
        let labels = [StanceLabel::Pro, StanceLabel::Anti, StanceLabel::Pro];
        let (_, g) = loss_and_logit_grad(z.view(), &labels).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..2 {
                let mut plus = z.clone();
                plus[[i, j]] += h;
                let mut minus = z.clone();
                minus[[i, j]] -= h;
                let lp = bce_loss_labels(&labels, softmax_rows(plus.view()).view()).unwrap();
                let lm = bce_loss_labels(&labels, softmax_rows(minus.view()).view()).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - g[[i, j]]).abs() < 1e-8, "({i},{j}) {fd} vs {}", g[[i, j]]);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn softmax_is_a_distribution(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            let p = softmax(&[a, b]);
            proptest::prop_assert!(p.iter().all(|&x| x > 0.0));
            proptest::prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
