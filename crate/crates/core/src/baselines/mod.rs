//! Classical comparison classifiers: ridge least-squares, Gaussian naive
//! Bayes, and an RBF-kernel SVM trained by SMO.
//!
//! All three share one contract: fit on `f64` features with stance labels,
//! predict labels, and break exact ties toward [`StanceLabel::Anti`].

mod gnb;
mod linear;
mod svm;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::corpus::StanceLabel;

pub use gnb::{fit_gnb, GaussianNb, VARIANCE_FLOOR};
pub use linear::{fit_linear, LinearModel};
pub use svm::{fit_svm_rbf, SvmConfig, SvmRbf};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("single-class data: no {missing} samples")]
    SingleClass { missing: StanceLabel },
    #[error("class {0} needs at least 2 samples for a variance")]
    TooFewSamples(StanceLabel),
    #[error("ridge penalty must be non-negative, got {0}")]
    NegativeRidge(f64),
    #[error("invalid SVM parameter: {0}")]
    InvalidParameter(String),
    #[error("SMO did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("expected {expected} features, got {found}")]
    FeatureCount { expected: usize, found: usize },
    #[error("linear system could not be solved")]
    Singular,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

pub type Result<T, E = BaselineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Linear,
    GaussianNb,
    SvmRbf,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [BaselineKind::Linear, BaselineKind::GaussianNb, BaselineKind::SvmRbf];

    /// Checkpoint kind tag.
    pub fn tag(self) -> &'static str {
        match self {
            BaselineKind::Linear => "linear",
            BaselineKind::GaussianNb => "gnb",
            BaselineKind::SvmRbf => "svm_rbf",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        BaselineKind::ALL.into_iter().find(|k| k.tag() == tag)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineModel {
    Linear(LinearModel),
    GaussianNb(GaussianNb),
    SvmRbf(SvmRbf),
}

impl BaselineModel {
    pub fn kind(&self) -> BaselineKind {
        match self {
            BaselineModel::Linear(_) => BaselineKind::Linear,
            BaselineModel::GaussianNb(_) => BaselineKind::GaussianNb,
            BaselineModel::SvmRbf(_) => BaselineKind::SvmRbf,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            BaselineModel::Linear(m) => m.weights.len(),
            BaselineModel::GaussianNb(m) => m.n_features(),
            BaselineModel::SvmRbf(m) => m.n_features(),
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<StanceLabel>> {
        match self {
            BaselineModel::Linear(m) => m.predict(x),
            BaselineModel::GaussianNb(m) => m.predict(x),
            BaselineModel::SvmRbf(m) => m.predict(x),
        }
    }

    /// Writes the kind tag and the model's parameters into `ckpt`.
    pub fn write_to(&self, ckpt: &mut Checkpoint) -> Result<()> {
        ckpt.set("kind", self.kind().tag());
        match self {
            BaselineModel::Linear(m) => m.write_to(ckpt),
            BaselineModel::GaussianNb(m) => m.write_to(ckpt),
            BaselineModel::SvmRbf(m) => m.write_to(ckpt),
        }
    }

    pub fn read_from(ckpt: &Checkpoint) -> Result<Self> {
        let tag = ckpt.get("kind")?;
        match BaselineKind::from_tag(tag) {
            Some(BaselineKind::Linear) => Ok(BaselineModel::Linear(LinearModel::read_from(ckpt)?)),
            Some(BaselineKind::GaussianNb) => Ok(BaselineModel::GaussianNb(GaussianNb::read_from(ckpt)?)),
            Some(BaselineKind::SvmRbf) => Ok(BaselineModel::SvmRbf(SvmRbf::read_from(ckpt)?)),
            None => Err(CheckpointError::WrongKind { expected: "a baseline".into(), found: tag.to_owned() }.into()),
        }
    }
}

/// Per-class sample counts, failing on a missing class.
pub(crate) fn class_counts(rows: usize, y: &[StanceLabel]) -> Result<[usize; 2]> {
    if rows != y.len() {
        return Err(BaselineError::LengthMismatch { rows, labels: y.len() });
    }
    let mut counts = [0usize; 2];
    for l in y {
        counts[l.index()] += 1;
    }
    for label in StanceLabel::ALL {
        if counts[label.index()] == 0 {
            return Err(BaselineError::SingleClass { missing: label });
        }
    }
    Ok(counts)
}

pub(crate) fn check_width(expected: usize, x: &ArrayView2<f64>) -> Result<()> {
    if x.ncols() != expected {
        return Err(BaselineError::FeatureCount { expected, found: x.ncols() });
    }
    Ok(())
}

/// Sign rule with ties to Anti.
pub(crate) fn label_of_score(score: f64) -> StanceLabel {
    if score > 0.0 {
        StanceLabel::Pro
    } else {
        StanceLabel::Anti
    }
}
