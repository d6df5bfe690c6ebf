//! The stance classifier: a six-layer batch-normalized MLP trained with
//! AdamW on a softmax / binary cross-entropy objective.

mod adamw;
mod gradcheck;
mod loss;
mod mlp;
mod persist;
mod train;

use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use thiserror::Error;

use crate::corpus::StanceLabel;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{bce_loss, bce_loss_labels, one_hot, softmax, softmax_rows, BCE_EPS};
pub use mlp::{init_params, Architecture, BatchNorm, DenseLayer, ForwardTrace, Gradients, LayerGrads, Mode, ModelParams, DEPTH};
pub use persist::KIND as CHECKPOINT_KIND;
pub use train::{predict, train, EpochMetrics, Prediction, TrainConfig};

/// Number of stance classes.
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input dimension must be positive")]
    ZeroInput,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite input at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },
    #[error("training mode needs a batch of at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("backward needs the state of a training-mode forward pass")]
    NoTrainingState,
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("single-class data: no {missing} samples")]
    SingleClass { missing: StanceLabel },
    #[error("need at least 2 samples of class {0}")]
    TooFewSamples(StanceLabel),
    #[error("invalid training configuration: {0}")]
    Config(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Floating-point element type of model tensors. Training runs in `f32`;
/// the gradient check uses an `f64` shadow of the same network.
pub trait Scalar:
    LinalgScalar
    + ScalarOperand
    + Float
    + FromPrimitive
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("finite conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
