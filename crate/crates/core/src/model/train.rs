use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::softmax;
use super::{adamw_step, AdamWConfig, AdamWState, Architecture, Mode, ModelError, ModelParams, Result, NUM_CLASSES};
use crate::corpus::StanceLabel;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub dropout_p: f64,
    pub leaky_slope: f64,
    pub adamw: AdamWConfig,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            epochs: 80,
            batch_size: 256,
            hidden_dim: 1024,
            dropout_p: 0.2,
            leaky_slope: 0.01,
            adamw: AdamWConfig::default(),
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(ModelError::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(ModelError::Config(format!("dropout probability {} outside [0, 1)", self.dropout_p)));
        }
        if self.batch_size < 2 {
            return Err(ModelError::Config("batch size must be at least 2".into()));
        }
        if self.hidden_dim == 0 {
            return Err(ModelError::Config("hidden width must be positive".into()));
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture { dropout_p: self.dropout_p, leaky_slope: self.leaky_slope, ..Architecture::new(input_dim, self.hidden_dim) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

fn check_labels(labels: &[StanceLabel]) -> Result<()> {
    let mut counts = [0usize; 2];
    for l in labels {
        counts[l.index()] += 1;
    }
    for label in StanceLabel::ALL {
        match counts[label.index()] {
            0 => return Err(ModelError::SingleClass { missing: label }),
            1 => return Err(ModelError::TooFewSamples(label)),
            _ => {}
        }
    }
    Ok(())
}

fn argmax_label(row: &[f32]) -> StanceLabel {
    if row[1] > row[0] {
        StanceLabel::Pro
    } else {
        StanceLabel::Anti
    }
}

/// Minibatch AdamW training for a fixed number of epochs. Fully determined
/// by the data and `config.seed`.
pub fn train(
    x: ArrayView2<f32>,
    labels: &[StanceLabel],
    config: &TrainConfig,
) -> Result<(ModelParams<f32>, Vec<EpochMetrics>)> {
    config.validate()?;
    if x.nrows() != labels.len() {
        return Err(ModelError::Shape(format!("{} rows but {} labels", x.nrows(), labels.len())));
    }
    check_labels(labels)?;

    let mut params = ModelParams::<f32>::init(config.architecture(x.ncols()), rng::derive_seed(config.seed, &[0]))?;
    let mut state = AdamWState::new(&mut params);
    let mut rng = rng::seeded(rng::derive_seed(config.seed, &[1]));
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0;

    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch = x.select(Axis(0), chunk);
            let batch_labels: Vec<StanceLabel> = chunk.iter().map(|&i| labels[i]).collect();
            let trace = params.forward(batch.view(), Mode::Train, &mut rng)?;
            let (loss, grads) = params.backward(&trace, &batch_labels)?;
            params.update_running_stats(&trace);
            step += 1;
            adamw_step(&mut params, &grads, &mut state, step, config.learning_rate, &config.adamw)?;

            loss_sum += f64::from(loss) * chunk.len() as f64;
            seen += chunk.len();
            correct += trace
                .logits
                .rows()
                .into_iter()
                .zip(&batch_labels)
                .filter(|(row, &l)| argmax_label(row.as_slice().expect("contiguous")) == l)
                .count();
        }
        let denom = seen.max(1) as f64;
        history.push(EpochMetrics { epoch: epoch + 1, loss: loss_sum / denom, accuracy: correct as f64 / denom });
    }
    Ok((params, history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: [f64; NUM_CLASSES],
    pub label: StanceLabel,
    /// Per-class standard deviation over Monte-Carlo passes, when sampled.
    pub mc_std: Option<[f64; NUM_CLASSES]>,
}

impl Prediction {
    fn from_probs(probs: [f64; NUM_CLASSES], mc_std: Option<[f64; NUM_CLASSES]>) -> Self {
        let label = if probs[1] > probs[0] { StanceLabel::Pro } else { StanceLabel::Anti };
        Prediction { probs, label, mc_std }
    }
}

const PREDICT_CHUNK: usize = 1024;

/// Class probabilities for every row of `x`. With `mc_samples = 0` this is a
/// single eval-mode pass; otherwise the mean and spread of that many
/// dropout-active passes drawn from `seed`.
pub fn predict(params: &ModelParams<f32>, x: ArrayView2<f32>, mc_samples: usize, seed: u64) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(x.nrows());
    let mut rng = rng::seeded(seed);
    for start in (0..x.nrows()).step_by(PREDICT_CHUNK) {
        let chunk = x.slice(s![start..(start + PREDICT_CHUNK).min(x.nrows()), ..]);
        if mc_samples == 0 {
            let logits = params.logits(chunk)?;
            for row in logits.rows() {
                let p = softmax(row.as_slice().expect("contiguous"));
                out.push(Prediction::from_probs([f64::from(p[0]), f64::from(p[1])], None));
            }
            continue;
        }
        let mut sum = Array2::<f64>::zeros((chunk.nrows(), NUM_CLASSES));
        let mut sum_sq = Array2::<f64>::zeros((chunk.nrows(), NUM_CLASSES));
        for _ in 0..mc_samples {
            let logits = params.forward(chunk, Mode::Mc, &mut rng)?.logits;
            for (r, row) in logits.rows().into_iter().enumerate() {
                let p = softmax(row.as_slice().expect("contiguous"));
                for k in 0..NUM_CLASSES {
                    let v = f64::from(p[k]);
                    sum[[r, k]] += v;
                    sum_sq[[r, k]] += v * v;
                }
            }
        }
        let t = mc_samples as f64;
        for r in 0..chunk.nrows() {
            let mut probs = [0.0; NUM_CLASSES];
            let mut std = [0.0; NUM_CLASSES];
            for k in 0..NUM_CLASSES {
                let mean = sum[[r, k]] / t;
                probs[k] = mean;
                std[k] = (sum_sq[[r, k]] / t - mean * mean).max(0.0).sqrt();
            }
            out.push(Prediction::from_probs(probs, Some(std)));
        }
    }
    Ok(out)
}
