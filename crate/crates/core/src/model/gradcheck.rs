use ndarray::{Array2, ArrayView2};

use super::{Mode, ModelParams, Result};
use crate::corpus::StanceLabel;
use crate::rng;

/// Outcome of comparing backpropagated gradients with finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter holding the worst error, as `tensor[index]`.
    pub worst: String,
    pub checked: usize,
    /// Entries whose step had to shrink because it straddled a LeakyReLU kink.
    pub kink_refined: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Base finite-difference step.
pub const STEP: f64 = 1e-3;
const MIN_STEP: f64 = 1e-7;

struct Probe<'a> {
    x: Array2<f64>,
    labels: &'a [StanceLabel],
    masks: Vec<Option<Array2<f64>>>,
    pattern: Vec<bool>,
}

impl Probe<'_> {
    /// Loss at the current parameters, and whether every hidden unit kept
    /// the activation side it had at the unperturbed point.
    fn loss(&self, p: &ModelParams<f64>) -> Result<(f64, bool)> {
        let t = p.forward_with_masks(self.x.view(), Mode::Train, &self.masks)?;
        let same_side = t.activation_pattern() == self.pattern;
        Ok((p.backward(&t, self.labels)?.0, same_side))
    }

    fn central(&self, p: &mut ModelParams<f64>, k: usize, i: usize, h: f64) -> Result<(f64, bool)> {
        let original = p.tensors_mut()[k].1[i];
        p.tensors_mut()[k].1[i] = original + h;
        let (plus, a) = self.loss(p)?;
        p.tensors_mut()[k].1[i] = original - h;
        let (minus, b) = self.loss(p)?;
        p.tensors_mut()[k].1[i] = original;
        Ok(((plus - minus) / (2.0 * h), a && b))
    }
}

/// Checks every trainable parameter of `params` against finite differences
/// on an `f64` copy of the network, in training mode with one fixed set of
/// dropout masks drawn from `seed`.
///
/// The numerical derivative is the Richardson combination of central
/// differences at steps `h` and `2h` (`h` = 1e-3), which cancels the `h²`
/// truncation term. Where a perturbation moves any hidden unit across the
/// LeakyReLU kink, the step is divided by ten until it no longer does.
///
/// Relative error per entry is `|g − g_fd| / max(|g|, |g_fd|, 1e-8)`.
pub fn grad_check<F: super::Scalar>(
    params: &ModelParams<F>,
    batch: ArrayView2<F>,
    labels: &[StanceLabel],
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut shadow: ModelParams<f64> = params.cast();
    let x = batch.mapv(|v| v.to_f64_lossy());
    let mut rng = rng::seeded(seed);
    let trace = shadow.forward(x.view(), Mode::Train, &mut rng)?;
    let (_, grads) = shadow.backward(&trace, labels)?;
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|(n, g)| (n, g.to_vec())).collect();
    let probe = Probe { masks: trace.masks(), pattern: trace.activation_pattern(), x, labels };

    let mut report =
        GradCheckReport { max_rel_error: 0.0, worst: String::new(), checked: 0, kink_refined: 0, tolerance };
    for (k, (name, g)) in analytic.iter().enumerate() {
        for i in 0..g.len() {
            let mut h = STEP;
            let fd = loop {
                let (narrow, ok_narrow) = probe.central(&mut shadow, k, i, h)?;
                let (wide, ok_wide) = probe.central(&mut shadow, k, i, 2.0 * h)?;
                if (ok_wide && ok_narrow) || h / 10.0 < MIN_STEP {
                    break (4.0 * narrow - wide) / 3.0;
                }
                if h == STEP {
                    report.kink_refined += 1;
                }
                h /= 10.0;
            };
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-8);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{name}[{i}]");
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use rand::Rng;

    fn setup(dropout: f64, seed: u64) -> (ModelParams<f64>, Array2<f64>, Vec<StanceLabel>) {
        let arch = Architecture { dropout_p: dropout, ..Architecture::new(5, 8) };
        let params = ModelParams::<f64>::init(arch, seed).unwrap();
        let mut rng = crate::rng::seeded(seed + 100);
        let x = Array2::from_shape_simple_fn((4, 5), || rng.gen_range(-1.0..1.0));
        let labels = vec![StanceLabel::Anti, StanceLabel::Pro, StanceLabel::Pro, StanceLabel::Anti];
        (params, x, labels)
    }

    #[test]
    fn exact_without_dropout() {
        let (p, x, y) = setup(0.0, 1);
        let r = grad_check(&p, x.view(), &y, 1e-4, 0).unwrap();
        assert_eq!(r.checked, p.num_parameters());
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn exact_with_frozen_dropout_masks() {
        let (p, x, y) = setup(0.2, 2);
        let r = grad_check(&p, x.view(), &y, 1e-4, 7).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
