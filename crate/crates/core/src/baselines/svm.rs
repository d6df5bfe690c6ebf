use std::collections::{HashMap, VecDeque};
use std::rc::Rc;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use super::{check_width, class_counts, label_of_score, BaselineError, Result};
use crate::checkpoint::{Checkpoint, Tensor};
use crate::corpus::StanceLabel;

/// Curvature substitute when the pair's kernel geometry is degenerate.
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    /// Kernel width; `None` means `1 / n_features`.
    pub gamma: Option<f64>,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    /// Iteration cap; `None` means `max(100_000, 100·n)`.
    pub max_iter: Option<usize>,
    /// Kernel row cache budget in bytes.
    pub cache_bytes: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { c: 1.0, gamma: None, tol: 1e-3, max_iter: None, cache_bytes: 256 << 20 }
    }
}

/// Soft-margin RBF support vector machine. Only the support vectors are
/// kept; `f(x) = Σ αᵢ yᵢ exp(−γ‖x − xᵢ‖²) − ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmRbf {
    pub support: Array2<f64>,
    pub alphas: Vec<f64>,
    pub labels: Vec<f64>,
    pub rho: f64,
    pub gamma: f64,
    pub c: f64,
    /// SMO iterations used by the fit.
    pub iterations: usize,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Rows of the kernel matrix computed on demand and kept in a FIFO cache.
struct KernelRows<'a> {
    x: ArrayView2<'a, f64>,
    gamma: f64,
    capacity: usize,
    rows: HashMap<usize, Rc<Vec<f64>>>,
    order: VecDeque<usize>,
}

impl<'a> KernelRows<'a> {
    fn new(x: ArrayView2<'a, f64>, gamma: f64, cache_bytes: usize) -> Self {
        let capacity = (cache_bytes / (8 * x.nrows().max(1))).max(2);
        KernelRows { x, gamma, capacity, rows: HashMap::new(), order: VecDeque::new() }
    }

    fn row(&mut self, i: usize) -> Rc<Vec<f64>> {
        if let Some(r) = self.rows.get(&i) {
            return Rc::clone(r);
        }
        let xi = self.x.row(i);
        let row: Rc<Vec<f64>> =
            Rc::new(self.x.rows().into_iter().map(|xt| (-self.gamma * sq_dist(xi, xt)).exp()).collect());
        if self.rows.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.rows.remove(&old);
            }
        }
        self.rows.insert(i, Rc::clone(&row));
        self.order.push_back(i);
        row
    }
}

/// Solves the soft-margin dual with SMO, choosing each working pair by
/// maximal violation for `i` and second-order gain for `j`.
pub fn fit_svm_rbf(x: ArrayView2<f64>, y: &[StanceLabel], config: &SvmConfig) -> Result<SvmRbf> {
    class_counts(x.nrows(), y)?;
    let c = config.c;
    if !(c > 0.0 && c.is_finite()) {
        return Err(BaselineError::InvalidParameter(format!("C must be positive, got {c}")));
    }
    let gamma = config.gamma.unwrap_or(1.0 / x.ncols().max(1) as f64);
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(BaselineError::InvalidParameter(format!("gamma must be positive, got {gamma}")));
    }
    if !(config.tol > 0.0) {
        return Err(BaselineError::InvalidParameter(format!("tolerance must be positive, got {}", config.tol)));
    }
    let n = x.nrows();
    let max_iter = config.max_iter.unwrap_or_else(|| (100 * n).max(100_000));
    let yv: Vec<f64> = y.iter().map(|l| l.sign()).collect();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut kernel = KernelRows::new(x, gamma, config.cache_bytes);
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    loop {
        // i: maximal violator among the indices that may move up
        let (mut gmax, mut i) = (f64::NEG_INFINITY, usize::MAX);
        for t in 0..n {
            let movable = if yv[t] > 0.0 { !upper(alpha[t]) } else { !lower(alpha[t]) };
            if movable && -yv[t] * grad[t] >= gmax {
                gmax = -yv[t] * grad[t];
                i = t;
            }
        }
        if i == usize::MAX {
            break;
        }
        let ki = kernel.row(i);
        let (mut gmax2, mut j, mut best) = (f64::NEG_INFINITY, usize::MAX, f64::INFINITY);
        for t in 0..n {
            let movable = if yv[t] > 0.0 { !lower(alpha[t]) } else { !upper(alpha[t]) };
            if !movable {
                continue;
            }
            let v = yv[t] * grad[t];
            gmax2 = gmax2.max(v);
            let diff = gmax + v;
            if diff > 0.0 {
                let quad = 2.0 - 2.0 * ki[t];
                let gain = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                if gain <= best {
                    best = gain;
                    j = t;
                }
            }
        }
        if gmax + gmax2 < config.tol || j == usize::MAX {
            break;
        }
        if iterations >= max_iter {
            return Err(BaselineError::NotConverged { iterations });
        }
        iterations += 1;
        let kj = kernel.row(j);

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if yv[i] != yv[j] {
            let quad = (2.0 - 2.0 * ki[j]).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (2.0 - 2.0 * ki[j]).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += yv[t] * (yv[i] * ki[t] * di + yv[j] * kj[t] * dj);
        }
    }

    // ρ: average over free vectors, else the midpoint of the feasible band
    let (mut ub, mut lb, mut free_sum, mut free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = yv[t] * grad[t];
        if upper(alpha[t]) {
            if yv[t] < 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else if lower(alpha[t]) {
            if yv[t] > 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 { free_sum / free as f64 } else { (ub + lb) / 2.0 };

    let sv: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    Ok(SvmRbf {
        support: x.select(Axis(0), &sv),
        alphas: sv.iter().map(|&t| alpha[t]).collect(),
        labels: sv.iter().map(|&t| yv[t]).collect(),
        rho,
        gamma,
        c,
        iterations,
    })
}

impl SvmRbf {
    pub fn n_features(&self) -> usize {
        self.support.ncols()
    }

    pub fn decision(&self, row: ArrayView1<f64>) -> f64 {
        self.support
            .rows()
            .into_iter()
            .zip(self.alphas.iter().zip(&self.labels))
            .map(|(sv, (a, y))| a * y * (-self.gamma * sq_dist(sv, row)).exp())
            .sum::<f64>()
            - self.rho
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<StanceLabel>> {
        check_width(self.n_features(), &x)?;
        Ok(x.rows().into_iter().map(|r| label_of_score(self.decision(r))).collect())
    }

    /// Dual objective `Σα − ½ Σᵢⱼ αᵢαⱼyᵢyⱼK(xᵢ, xⱼ)`.
    pub fn dual_objective(&self) -> f64 {
        let mut quad = 0.0;
        for (i, a) in self.support.rows().into_iter().enumerate() {
            for (j, b) in self.support.rows().into_iter().enumerate() {
                quad += self.alphas[i] * self.alphas[j] * self.labels[i] * self.labels[j] * (-self.gamma * sq_dist(a, b)).exp();
            }
        }
        self.alphas.iter().sum::<f64>() - 0.5 * quad
    }

    /// Largest `|yᵢ f(xᵢ) − 1|` over free support vectors (`0 < αᵢ < C`).
    pub fn free_kkt_residual(&self) -> f64 {
        self.support
            .rows()
            .into_iter()
            .zip(self.alphas.iter().zip(&self.labels))
            .filter(|(_, (a, _))| **a < self.c)
            .map(|(row, (_, y))| (y * self.decision(row) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub(super) fn write_to(&self, ckpt: &mut Checkpoint) -> Result<()> {
        let (m, d) = self.support.dim();
        ckpt.set("n_features", d);
        ckpt.set("n_support", m);
        ckpt.set("gamma", self.gamma);
        ckpt.set("c", self.c);
        ckpt.set("rho", self.rho);
        ckpt.set("iterations", self.iterations);
        ckpt.push(Tensor::f64("support", vec![m, d], self.support.iter().copied().collect())?);
        ckpt.push(Tensor::f64("alphas", vec![m], self.alphas.clone())?);
        ckpt.push(Tensor::f64("labels", vec![m], self.labels.clone())?);
        Ok(())
    }

    pub(super) fn read_from(ckpt: &Checkpoint) -> Result<Self> {
        let (m, d): (usize, usize) = (ckpt.parse("n_support")?, ckpt.parse("n_features")?);
        Ok(SvmRbf {
            support: Array2::from_shape_vec((m, d), ckpt.f64_tensor("support", &[m, d])?.to_vec()).expect("shape checked"),
            alphas: ckpt.f64_tensor("alphas", &[m])?.to_vec(),
            labels: ckpt.f64_tensor("labels", &[m])?.to_vec(),
            rho: ckpt.parse("rho")?,
            gamma: ckpt.parse("gamma")?,
            c: ckpt.parse("c")?,
            iterations: ckpt.parse("iterations")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, concatenate};
    use rand::Rng;
    use StanceLabel::{Anti, Pro};

    fn xor() -> (Array2<f64>, Vec<StanceLabel>) {
        (array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]], vec![Anti, Anti, Pro, Pro])
    }

    fn xor_config() -> SvmConfig {
        SvmConfig { c: 10.0, gamma: Some(1.0), ..Default::default() }
    }

    /// Dual objective of XOR for arbitrary α, written from the definition.
    fn xor_dual(a: [f64; 4]) -> f64 {
        let (x, y) = xor();
        let mut q = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let k = (-sq_dist(x.row(i), x.row(j))).exp();
                q += a[i] * a[j] * y[i].sign() * y[j].sign() * k;
            }
        }
        a.iter().sum::<f64>() - 0.5 * q
    }

    /// Two opposite-label points: the dual optimum is α₁ = α₂ = 1 / (1 − K₁₂),
    /// which one exact pair update reaches.
    #[test]
    fn opposite_pair_step_is_exact() {
        for gamma in [0.003, 0.5, 2.0] {
            let x = array![[0.0, 0.0], [1.0, 0.5]];
            let k = (-gamma * 1.25f64).exp();
            let config = SvmConfig { c: 1e6, gamma: Some(gamma), tol: 1e-9, ..Default::default() };
            let m = fit_svm_rbf(x.view(), &[Anti, Pro], &config).unwrap();
            assert_eq!(m.iterations, 1, "gamma {gamma}");
            for a in &m.alphas {
                assert!((a - 1.0 / (1.0 - k)).abs() < 1e-9 * a, "gamma {gamma}: {a}");
            }
        }
    }

    /// Overlapping classes; reference values from LIBSVM (C = 1, γ = 0.5,
    /// tolerance 1e-8).
    #[test]
    fn matches_libsvm_on_overlapping_classes() {
        let n = 60;
        let y: Vec<StanceLabel> = (0..n)
            .map(|i| {
                let t = i as f64;
                if (1.7 * t).sin() + 0.5 * (0.3 * t).cos() > 0.0 { Pro } else { Anti }
            })
            .collect();
        let x = Array2::from_shape_fn((n, 3), |(i, j)| {
            let t = i as f64;
            match j {
                0 => (0.9 * t).sin() + 0.4 * y[i].sign(),
                1 => (1.1 * t).cos(),
                _ => ((i * 37) % 11) as f64 / 11.0,
            }
        });
        let config = SvmConfig { c: 1.0, gamma: Some(0.5), tol: 1e-8, ..Default::default() };
        let m = fit_svm_rbf(x.view(), &y, &config).unwrap();
        assert!((m.rho - 0.0616668266734278).abs() < 1e-6, "rho {}", m.rho);
        assert_eq!(m.alphas.len(), 47);
        let expected =
            [0.074167501, 1.1737924421, 1.3538891118, -0.7458693371, -0.4002860824, -0.5015723133, -1.0647431094, -0.6004175144];
        for (i, e) in expected.iter().enumerate() {
            assert!((m.decision(x.row(i)) - e).abs() < 1e-6, "row {i}: {} vs {e}", m.decision(x.row(i)));
        }
    }

    #[test]
    fn solves_xor_and_matches_grid_search() {
        let (x, y) = xor();
        let m = fit_svm_rbf(x.view(), &y, &xor_config()).unwrap();
        assert_eq!(m.predict(x.view()).unwrap(), y);
        assert!(m.free_kkt_residual() <= 2.0 * 1e-3, "{}", m.free_kkt_residual());

        // brute force over the feasible set α₀+α₁ = α₂+α₃, step 0.1
        let (mut best, mut arg) = (f64::NEG_INFINITY, [0.0; 4]);
        for a0 in 0..=100 {
            for a1 in 0..=100 {
                for a2 in 0..=100 {
                    let a = [a0 as f64 / 10.0, a1 as f64 / 10.0, a2 as f64 / 10.0, (a0 + a1 - a2) as f64 / 10.0];
                    if a[3] < 0.0 || a[3] > 10.0 {
                        continue;
                    }
                    let w = xor_dual(a);
                    if w > best {
                        best = w;
                        arg = a;
                    }
                }
            }
        }
        let smo = m.dual_objective();
        assert!(smo >= best - 1e-3, "SMO {smo} below grid optimum {best}");
        assert_eq!(m.alphas.len(), 4);
        for (a, g) in m.alphas.iter().zip(arg) {
            assert!((a - g).abs() <= 0.1, "{:?} vs {arg:?}", m.alphas);
        }
    }

    #[test]
    fn duplicated_data_keeps_the_decision_signs() {
        let mut rng = crate::rng::seeded(3);
        let x = Array2::from_shape_fn((30, 2), |_| rng.gen_range(-2.0..2.0));
        let y: Vec<StanceLabel> = x.rows().into_iter().map(|r| if r[0] * r[1] > 0.0 { Pro } else { Anti }).collect();
        let cfg = SvmConfig { c: 5.0, gamma: Some(0.8), ..Default::default() };
        let a = fit_svm_rbf(x.view(), &y, &cfg).unwrap();
        let x2 = concatenate![Axis(0), x, x];
        let y2: Vec<StanceLabel> = y.iter().chain(&y).copied().collect();
        let b = fit_svm_rbf(x2.view(), &y2, &cfg).unwrap();
        let probe = Array2::from_shape_fn((121, 2), |(i, j)| if j == 0 { (i / 11) as f64 * 0.4 - 2.0 } else { (i % 11) as f64 * 0.4 - 2.0 });
        let (pa, pb) = (a.predict(probe.view()).unwrap(), b.predict(probe.view()).unwrap());
        let agree = pa.iter().zip(&pb).filter(|(p, q)| p == q).count();
        assert!(agree >= 119, "{agree}/121 probe points agree");
    }

    #[test]
    fn kkt_holds_on_overlapping_classes() {
        let mut rng = crate::rng::seeded(11);
        let x = Array2::from_shape_fn((80, 3), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<StanceLabel> = x.rows().into_iter().map(|r| if r.sum() + rng.gen_range(-0.5..0.5) > 0.0 { Pro } else { Anti }).collect();
        let m = fit_svm_rbf(x.view(), &y, &SvmConfig::default()).unwrap();
        assert!(m.alphas.iter().all(|&a| a > 0.0 && a <= m.c));
        assert!(m.free_kkt_residual() <= 2.0 * 1e-3);
        let balance: f64 = m.alphas.iter().zip(&m.labels).map(|(a, y)| a * y).sum();
        assert!(balance.abs() < 1e-9);
        assert_eq!(m.gamma, 1.0 / 3.0);
    }

    #[test]
    fn preconditions_and_iteration_cap() {
        let (x, y) = xor();
        assert!(matches!(fit_svm_rbf(x.view(), &[Pro; 4], &xor_config()), Err(BaselineError::SingleClass { missing: Anti })));
        let bad = SvmConfig { c: 0.0, ..xor_config() };
        assert!(matches!(fit_svm_rbf(x.view(), &y, &bad), Err(BaselineError::InvalidParameter(_))));
        let bad = SvmConfig { gamma: Some(-1.0), ..xor_config() };
        assert!(matches!(fit_svm_rbf(x.view(), &y, &bad), Err(BaselineError::InvalidParameter(_))));
        let capped = SvmConfig { max_iter: Some(1), tol: 1e-12, ..xor_config() };
        assert!(matches!(fit_svm_rbf(x.view(), &y, &capped), Err(BaselineError::NotConverged { iterations: 1 })));
    }

    #[test]
    fn tiny_cache_gives_the_same_model() {
        let mut rng = crate::rng::seeded(5);
        let x = Array2::from_shape_fn((40, 2), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<StanceLabel> = x.rows().into_iter().map(|r| if r[0] > r[1] { Pro } else { Anti }).collect();
        let a = fit_svm_rbf(x.view(), &y, &SvmConfig::default()).unwrap();
        let b = fit_svm_rbf(x.view(), &y, &SvmConfig { cache_bytes: 0, ..Default::default() }).unwrap();
        assert_eq!(a, b);
    }
}
