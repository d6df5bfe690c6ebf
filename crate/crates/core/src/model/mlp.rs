use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::loss_and_logit_grad;
use super::{ModelError, Result, Scalar, NUM_CLASSES};
use crate::corpus::StanceLabel;

/// Number of affine layers. The first `DEPTH - 1` are followed by batch
/// norm, LeakyReLU, and dropout; the last produces the logits.
pub const DEPTH: usize = 6;

/// Shapes and fixed (non-trainable) hyperparameters of the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub dropout_p: f64,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden_dim: usize) -> Self {
        Architecture {
            input_dim,
            hidden_dim,
            output_dim: NUM_CLASSES,
            dropout_p: 0.2,
            leaky_slope: 0.01,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    fn fan(&self, layer: usize) -> (usize, usize) {
        let fan_in = if layer == 0 { self.input_dim } else { self.hidden_dim };
        let fan_out = if layer == DEPTH - 1 { self.output_dim } else { self.hidden_dim };
        (fan_in, fan_out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
}

/// Affine map stored as `fan_in × fan_out`, so a batch maps as `x·W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub norm: Option<BatchNorm<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub arch: Architecture,
    pub layers: Vec<DenseLayer<F>>,
}

/// Glorot-uniform weights, zero biases, identity batch norm; deterministic
/// in `seed`.
pub fn init_params(input_dim: usize, hidden_dim: usize, seed: u64) -> Result<ModelParams<f32>> {
    ModelParams::init(Architecture::new(input_dim, hidden_dim), seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout on.
    Train,
    /// Running statistics, dropout off.
    Eval,
    /// Running statistics, dropout on (Monte-Carlo sampling).
    Mc,
}

#[derive(Debug, Clone)]
struct HiddenState<F> {
    input: Array2<F>,
    xhat: Array2<F>,
    inv_std: Array1<F>,
    normed: Array2<F>,
    mask: Option<Array2<F>>,
    batch_mean: Array1<F>,
    batch_var: Array1<F>,
}

/// Everything a forward pass produced that backward needs.
#[derive(Debug, Clone)]
pub struct ForwardTrace<F> {
    pub mode: Mode,
    pub logits: Array2<F>,
    hidden: Vec<HiddenState<F>>,
    head_input: Array2<F>,
}

impl<F: Scalar> ForwardTrace<F> {
    /// Dropout masks actually applied, one slot per hidden layer.
    pub fn masks(&self) -> Vec<Option<Array2<F>>> {
        self.hidden.iter().map(|h| h.mask.clone()).collect()
    }

    /// Which side of the LeakyReLU kink every hidden unit of every row sits on.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.hidden.iter().flat_map(|h| h.normed.iter().map(|&v| v > F::zero())).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub gamma: Option<Array1<F>>,
    pub beta: Option<Array1<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub layers: Vec<LayerGrads<F>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient tensors in the same order as [`ModelParams::tensors_mut`].
    pub fn tensors(&self) -> Vec<(String, &[F])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), l.weight.as_slice().expect("contiguous")));
            out.push((format!("layer{i}.bias"), l.bias.as_slice().expect("contiguous")));
            if let (Some(g), Some(b)) = (&l.gamma, &l.beta) {
                out.push((format!("layer{i}.gamma"), g.as_slice().expect("contiguous")));
                out.push((format!("layer{i}.beta"), b.as_slice().expect("contiguous")));
            }
        }
        out
    }
}

fn leaky<F: Scalar>(v: F, slope: F) -> F {
    if v > F::zero() {
        v
    } else {
        v * slope
    }
}

impl<F: Scalar> ModelParams<F> {
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        if arch.input_dim == 0 {
            return Err(ModelError::ZeroInput);
        }
        if arch.hidden_dim == 0 {
            return Err(ModelError::Config("hidden width must be positive".into()));
        }
        if !(0.0..1.0).contains(&arch.dropout_p) {
            return Err(ModelError::Config(format!("dropout probability {} outside [0, 1)", arch.dropout_p)));
        }
        let mut rng = crate::rng::seeded(seed);
        let layers = (0..DEPTH)
            .map(|l| {
                let (fan_in, fan_out) = arch.fan(l);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || {
                    F::from_f64_lossy(rng.gen_range(-limit..limit))
                });
                let norm = (l < DEPTH - 1).then(|| BatchNorm {
                    gamma: Array1::ones(fan_out),
                    beta: Array1::zeros(fan_out),
                    running_mean: Array1::zeros(fan_out),
                    running_var: Array1::ones(fan_out),
                });
                DenseLayer { weight, bias: Array1::zeros(fan_out), norm }
            })
            .collect();
        Ok(ModelParams { arch, layers })
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len() + l.norm.as_ref().map_or(0, |n| n.gamma.len() * 2))
            .sum()
    }

    /// Same network in another float type.
    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        let c1 = |a: &Array1<F>| a.mapv(|v| G::from_f64_lossy(v.to_f64_lossy()));
        let c2 = |a: &Array2<F>| a.mapv(|v| G::from_f64_lossy(v.to_f64_lossy()));
        ModelParams {
            arch: self.arch,
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weight: c2(&l.weight),
                    bias: c1(&l.bias),
                    norm: l.norm.as_ref().map(|n| BatchNorm {
                        gamma: c1(&n.gamma),
                        beta: c1(&n.beta),
                        running_mean: c1(&n.running_mean),
                        running_var: c1(&n.running_var),
                    }),
                })
                .collect(),
        }
    }

    /// Trainable tensors as flat slices, in a fixed order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [F])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.weight"), l.weight.as_slice_mut().expect("contiguous")));
            out.push((format!("layer{i}.bias"), l.bias.as_slice_mut().expect("contiguous")));
            if let Some(n) = &mut l.norm {
                out.push((format!("layer{i}.gamma"), n.gamma.as_slice_mut().expect("contiguous")));
                out.push((format!("layer{i}.beta"), n.beta.as_slice_mut().expect("contiguous")));
            }
        }
        out
    }

    fn check_input(&self, x: &ArrayView2<F>, mode: Mode) -> Result<()> {
        if x.ncols() != self.arch.input_dim {
            return Err(ModelError::Shape(format!(
                "batch has {} columns, network expects {}",
                x.ncols(),
                self.arch.input_dim
            )));
        }
        if mode == Mode::Train && x.nrows() < 2 {
            return Err(ModelError::BatchTooSmall(x.nrows()));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteInput { row: pos / x.ncols(), col: pos % x.ncols() });
        }
        Ok(())
    }

    /// Forward pass drawing fresh dropout masks from `rng` where dropout is
    /// active.
    pub fn forward<R: Rng>(&self, x: ArrayView2<F>, mode: Mode, rng: &mut R) -> Result<ForwardTrace<F>> {
        let p = self.arch.dropout_p;
        let keep = F::from_f64_lossy(1.0 / (1.0 - p));
        self.forward_impl(x, mode, |_, shape| {
            (mode != Mode::Eval && p > 0.0).then(|| {
                Array2::from_shape_simple_fn(shape, || if rng.gen::<f64>() < p { F::zero() } else { keep })
            })
        })
    }

    /// Forward pass that replays the given dropout masks (already scaled by
    /// `1/(1-p)`), one optional mask per hidden layer.
    pub fn forward_with_masks(&self, x: ArrayView2<F>, mode: Mode, masks: &[Option<Array2<F>>]) -> Result<ForwardTrace<F>> {
        if masks.len() != DEPTH - 1 {
            return Err(ModelError::Shape(format!("expected {} dropout masks, got {}", DEPTH - 1, masks.len())));
        }
        for m in masks.iter().flatten() {
            if m.dim() != (x.nrows(), self.arch.hidden_dim) {
                return Err(ModelError::Shape(format!("dropout mask {:?} does not match batch", m.dim())));
            }
        }
        self.forward_impl(x, mode, |l, _| masks[l].clone())
    }

    /// Deterministic eval-mode logits.
    pub fn logits(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        Ok(self.forward_impl(x, Mode::Eval, |_, _| None)?.logits)
    }

    fn forward_impl(
        &self,
        x: ArrayView2<F>,
        mode: Mode,
        mut mask_for: impl FnMut(usize, (usize, usize)) -> Option<Array2<F>>,
    ) -> Result<ForwardTrace<F>> {
        self.check_input(&x, mode)?;
        let eps = F::from_f64_lossy(self.arch.bn_eps);
        let slope = F::from_f64_lossy(self.arch.leaky_slope);
        let rows = x.nrows();
        let mut hidden = Vec::with_capacity(DEPTH - 1);
        let mut a = x.to_owned();
        for (l, layer) in self.layers[..DEPTH - 1].iter().enumerate() {
            let norm = layer.norm.as_ref().expect("hidden layers carry batch norm");
            let z = a.dot(&layer.weight) + &layer.bias;
            let (mean, var) = if mode == Mode::Train {
                let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
                let var = (&z - &mean).mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
                (mean, var)
            } else {
                (norm.running_mean.clone(), norm.running_var.clone())
            };
            let inv_std = var.mapv(|v| F::one() / (v + eps).sqrt());
            let xhat = (&z - &mean) * &inv_std;
            let normed = &xhat * &norm.gamma + &norm.beta;
            let mut out = normed.mapv(|v| leaky(v, slope));
            let mask = mask_for(l, (rows, self.arch.hidden_dim));
            if let Some(m) = &mask {
                out *= m;
            }
            hidden.push(HiddenState { input: a, xhat, inv_std, normed, mask, batch_mean: mean, batch_var: var });
            a = out;
        }
        let head = &self.layers[DEPTH - 1];
        let logits = a.dot(&head.weight) + &head.bias;
        Ok(ForwardTrace { mode, logits, hidden, head_input: a })
    }

    /// Folds the batch statistics of a training-mode pass into the running
    /// estimates (unbiased variance, momentum from the architecture).
    pub fn update_running_stats(&mut self, trace: &ForwardTrace<F>) {
        if trace.mode != Mode::Train {
            return;
        }
        let m = F::from_f64_lossy(self.arch.bn_momentum);
        let rows = trace.head_input.nrows();
        let unbias = F::from_usize(rows).unwrap() / F::from_usize(rows - 1).unwrap();
        for (layer, h) in self.layers.iter_mut().zip(&trace.hidden) {
            let norm = layer.norm.as_mut().expect("hidden layers carry batch norm");
            Zip::from(&mut norm.running_mean).and(&h.batch_mean).for_each(|r, &b| *r = (F::one() - m) * *r + m * b);
            Zip::from(&mut norm.running_var)
                .and(&h.batch_var)
                .for_each(|r, &b| *r = (F::one() - m) * *r + m * b * unbias);
        }
    }

    /// Mean loss of a training-mode pass and its exact gradient with respect
    /// to every weight, bias, γ, and β, reusing the pass's masks and batch
    /// statistics.
    pub fn backward(&self, trace: &ForwardTrace<F>, labels: &[StanceLabel]) -> Result<(F, Gradients<F>)> {
        if trace.mode != Mode::Train || trace.hidden.len() != DEPTH - 1 {
            return Err(ModelError::NoTrainingState);
        }
        let rows = trace.logits.nrows();
        if labels.len() != rows {
            return Err(ModelError::Shape(format!("{} labels for {} rows", labels.len(), rows)));
        }
        let (loss, dlogits) = loss_and_logit_grad(trace.logits.view(), labels)?;
        let slope = F::from_f64_lossy(self.arch.leaky_slope);
        let n = F::from_usize(rows).unwrap();

        let mut grads = Vec::with_capacity(DEPTH);
        let head = &self.layers[DEPTH - 1];
        grads.push(LayerGrads {
            weight: trace.head_input.t().dot(&dlogits),
            bias: dlogits.sum_axis(Axis(0)),
            gamma: None,
            beta: None,
        });
        let mut da = dlogits.dot(&head.weight.t());

        for l in (0..DEPTH - 1).rev() {
            let h = &trace.hidden[l];
            let layer = &self.layers[l];
            let gamma = &layer.norm.as_ref().expect("hidden layers carry batch norm").gamma;
            if let Some(m) = &h.mask {
                da *= m;
            }
            let mut dy = da;
            Zip::from(&mut dy).and(&h.normed).for_each(|d, &y| {
                if y <= F::zero() {
                    *d = *d * slope;
                }
            });
            let dgamma = (&dy * &h.xhat).sum_axis(Axis(0));
            let dbeta = dy.sum_axis(Axis(0));
            let dxhat = dy * gamma;
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &h.xhat).sum_axis(Axis(0));
            let dz = (dxhat * n - &sum_dxhat - &h.xhat * &sum_dxhat_xhat) * &(&h.inv_std / n);
            grads.push(LayerGrads {
                weight: h.input.t().dot(&dz),
                bias: dz.sum_axis(Axis(0)),
                gamma: Some(dgamma),
                beta: Some(dbeta),
            });
            da = if l > 0 { dz.dot(&layer.weight.t()) } else { Array2::zeros((0, 0)) };
        }
        grads.reverse();
        Ok((loss, Gradients { layers: grads }))
    }
}
