//! Uniform fit / predict / save over the MLP and the three baselines, plus
//! the on-disk bundle that ties a trained model to its feature layout.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{fit_gnb, fit_linear, fit_svm_rbf, BaselineError, BaselineModel, SvmConfig};
use crate::checkpoint::{Checkpoint, CheckpointError, Tensor};
use crate::corpus::{balanced_subset, chronological_split, CategoricalSchema, Corpus, CorpusError, StanceLabel};
use crate::embed::{EmbedError, FeatureSelection, Layout};
use crate::model::{self, ModelError, ModelParams, TrainConfig, CHECKPOINT_KIND};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("unknown model {0:?} (expected covexplain, linear, gnb or svm)")]
    UnknownModel(String),
    #[error("{0}")]
    Mismatch(String),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// The four classifiers compared in the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    CovExplain,
    Linear,
    GaussianNb,
    SvmRbf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::CovExplain, ModelKind::Linear, ModelKind::GaussianNb, ModelKind::SvmRbf];

    /// Short name used on the command line.
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::CovExplain => "covexplain",
            ModelKind::Linear => "linear",
            ModelKind::GaussianNb => "gnb",
            ModelKind::SvmRbf => "svm",
        }
    }

    /// Column heading in rendered reports.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::CovExplain => "CovExplain",
            ModelKind::Linear => "Linear",
            ModelKind::GaussianNb => "Naive Bayes",
            ModelKind::SvmRbf => "SVM",
        }
    }

    /// Parses `all` or a comma-separated list of tags.
    pub fn parse_list(list: &str) -> Result<Vec<ModelKind>> {
        if list.trim() == "all" {
            return Ok(ModelKind::ALL.to_vec());
        }
        let mut kinds = Vec::new();
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let k: ModelKind = item.parse()?;
            if !kinds.contains(&k) {
                kinds.push(k);
            }
        }
        if kinds.is_empty() {
            return Err(PipelineError::UnknownModel(list.to_owned()));
        }
        Ok(kinds)
    }
}

impl FromStr for ModelKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        ModelKind::ALL
            .into_iter()
            .find(|k| k.tag() == lower || k.display_name().eq_ignore_ascii_case(s))
            .or(match lower.as_str() {
                "mlp" => Some(ModelKind::CovExplain),
                "ridge" => Some(ModelKind::Linear),
                "naive_bayes" | "nb" => Some(ModelKind::GaussianNb),
                "svm_rbf" => Some(ModelKind::SvmRbf),
                _ => None,
            })
            .ok_or_else(|| PipelineError::UnknownModel(s.to_owned()))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Hyperparameters of every model kind. The seed inside `train` is replaced
/// by the per-fit seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub train: TrainConfig,
    pub ridge_lambda: f64,
    pub svm: SvmConfig,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams { train: TrainConfig::default(), ridge_lambda: 1.0, svm: SvmConfig::default() }
    }
}

/// A fitted classifier of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Mlp(ModelParams<f32>),
    Baseline(BaselineModel),
}

impl Predictor {
    pub fn fit(kind: ModelKind, x: ArrayView2<f32>, y: &[StanceLabel], hp: &Hyperparams, seed: u64) -> Result<Self> {
        if kind == ModelKind::CovExplain {
            let config = TrainConfig { seed, ..hp.train.clone() };
            let (params, _) = model::train(x, y, &config)?;
            return Ok(Predictor::Mlp(params));
        }
        let x64 = x.mapv(f64::from);
        let fitted = match kind {
            ModelKind::Linear => BaselineModel::Linear(fit_linear(x64.view(), y, hp.ridge_lambda)?),
            ModelKind::GaussianNb => BaselineModel::GaussianNb(fit_gnb(x64.view(), y)?),
            ModelKind::SvmRbf => BaselineModel::SvmRbf(fit_svm_rbf(x64.view(), y, &hp.svm)?),
            ModelKind::CovExplain => unreachable!(),
        };
        Ok(Predictor::Baseline(fitted))
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Predictor::Mlp(_) => ModelKind::CovExplain,
            Predictor::Baseline(BaselineModel::Linear(_)) => ModelKind::Linear,
            Predictor::Baseline(BaselineModel::GaussianNb(_)) => ModelKind::GaussianNb,
            Predictor::Baseline(BaselineModel::SvmRbf(_)) => ModelKind::SvmRbf,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Predictor::Mlp(p) => p.arch.input_dim,
            Predictor::Baseline(b) => b.n_features(),
        }
    }

    /// Predicted labels. `mc_samples` and `seed` only affect the MLP.
    pub fn predict(&self, x: ArrayView2<f32>, mc_samples: usize, seed: u64) -> Result<Vec<StanceLabel>> {
        match self {
            Predictor::Mlp(p) => Ok(model::predict(p, x, mc_samples, seed)?.into_iter().map(|p| p.label).collect()),
            Predictor::Baseline(b) => Ok(b.predict(x.mapv(f64::from).view())?),
        }
    }
}

/// Whether class balancing is applied to the training slices after the
/// chronological split, or to the whole corpus before it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum BalanceOrder {
    #[default]
    SplitThenBalance,
    BalanceThenSplit,
}

impl FromStr for BalanceOrder {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "split-then-balance" => Ok(BalanceOrder::SplitThenBalance),
            "balance-then-split" => Ok(BalanceOrder::BalanceThenSplit),
            other => Err(format!("unknown balance order {other:?}")),
        }
    }
}

/// Post indices of the class-balanced training set and of the held-out
/// last chronological slice, for `k` slices and balancing seed `seed`.
pub fn holdout(corpus: &Corpus, k: usize, order: BalanceOrder, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let labels = corpus.labels();
    match order {
        BalanceOrder::SplitThenBalance => {
            let split = chronological_split(corpus, k)?;
            let train = split.train_indices();
            let train_labels: Vec<StanceLabel> = train.iter().map(|&i| labels[i]).collect();
            let picked = balanced_subset(&train_labels, seed)?;
            Ok((picked.iter().map(|&j| train[j]).collect(), split.test_indices().to_vec()))
        }
        BalanceOrder::BalanceThenSplit => {
            let picked = balanced_subset(&labels, seed)?;
            let split = chronological_split(&corpus.subset(&picked), k)?;
            let back = |idx: &[usize]| idx.iter().map(|&j| picked[j]).collect::<Vec<_>>();
            Ok((back(&split.train_indices()), back(split.test_indices())))
        }
    }
}

/// Fraction of positions where `predicted` equals `truth`.
pub fn accuracy(predicted: &[StanceLabel], truth: &[StanceLabel]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}

/// Held-out classification quality. Precision and recall of a class with no
/// predicted (or no true) members are reported as 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    /// Per class, indexed by [`StanceLabel::index`].
    pub precision: [f64; 2],
    pub recall: [f64; 2],
    pub f1: [f64; 2],
    pub macro_f1: f64,
}

impl Metrics {
    pub fn compute(predicted: &[StanceLabel], truth: &[StanceLabel]) -> Self {
        let mut confusion = [[0usize; 2]; 2];
        for (p, t) in predicted.iter().zip(truth) {
            confusion[t.index()][p.index()] += 1;
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let mut precision = [0.0; 2];
        let mut recall = [0.0; 2];
        let mut f1 = [0.0; 2];
        for c in 0..2 {
            let tp = confusion[c][c];
            precision[c] = ratio(tp, confusion[0][c] + confusion[1][c]);
            recall[c] = ratio(tp, confusion[c][0] + confusion[c][1]);
            let s = precision[c] + recall[c];
            f1[c] = if s > 0.0 { 2.0 * precision[c] * recall[c] / s } else { 0.0 };
        }
        Metrics { n: truth.len(), accuracy: accuracy(predicted, truth), precision, recall, f1, macro_f1: (f1[0] + f1[1]) / 2.0 }
    }

    /// `(name, value)` pairs in a fixed order.
    pub fn entries(&self) -> Vec<(String, f64)> {
        let mut out = vec![("n".to_owned(), self.n as f64), ("accuracy".to_owned(), self.accuracy)];
        for label in StanceLabel::ALL {
            let c = label.index();
            out.push((format!("precision_{label}"), self.precision[c]));
            out.push((format!("recall_{label}"), self.recall[c]));
            out.push((format!("f1_{label}"), self.f1[c]));
        }
        out.push(("macro_f1".to_owned(), self.macro_f1));
        out
    }
}

/// A trained classifier together with everything needed to rebuild its
/// inputs: the categorical schema, the feature selection, the fused layout,
/// and the mean training vector (the reference point for explanations).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub predictor: Predictor,
    pub schema: CategoricalSchema,
    pub selection: FeatureSelection,
    pub layout: Layout,
    pub feature_mean: Vec<f32>,
}

impl TrainedModel {
    pub fn new(predictor: Predictor, schema: CategoricalSchema, selection: FeatureSelection, layout: Layout, x: ArrayView2<f32>) -> Result<Self> {
        if layout.total() != predictor.input_dim() || x.ncols() != layout.total() {
            return Err(PipelineError::Mismatch(format!(
                "layout width {} does not match model input {}",
                layout.total(),
                predictor.input_dim()
            )));
        }
        let feature_mean = match x.mean_axis(Axis(0)) {
            Some(m) => m.to_vec(),
            None => vec![0.0; x.ncols()],
        };
        Ok(TrainedModel { predictor, schema, selection, layout, feature_mean })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = match &self.predictor {
            Predictor::Mlp(p) => p.to_checkpoint()?,
            Predictor::Baseline(b) => {
                let mut c = Checkpoint::default();
                b.write_to(&mut c)?;
                c
            }
        };
        ckpt.set("bundle.schema", self.schema.to_json());
        ckpt.set("bundle.selection", &self.selection);
        ckpt.set("bundle.layout", self.layout.encode());
        ckpt.push(Tensor::f32("bundle.feature_mean", vec![self.feature_mean.len()], self.feature_mean.clone())?);
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let predictor = if ckpt.kind() == Some(CHECKPOINT_KIND) {
            Predictor::Mlp(ModelParams::from_checkpoint(ckpt)?)
        } else {
            Predictor::Baseline(BaselineModel::read_from(ckpt)?)
        };
        let schema = CategoricalSchema::from_json(ckpt.get("bundle.schema")?)?;
        let selection = FeatureSelection::parse(ckpt.get("bundle.selection")?)?;
        let layout = Layout::decode(ckpt.get("bundle.layout")?)?;
        if layout.total() != predictor.input_dim() {
            return Err(PipelineError::Mismatch(format!(
                "stored layout width {} does not match model input {}",
                layout.total(),
                predictor.input_dim()
            )));
        }
        let feature_mean = ckpt.f32_tensor("bundle.feature_mean", &[layout.total()])?.to_vec();
        Ok(TrainedModel { predictor, schema, selection, layout, feature_mean })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_checkpoint()?.save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn toy() -> (Array2<f32>, Vec<StanceLabel>) {
        let x = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f32 / 11.0 + if i % 2 == 0 { 1.0 } else { 0.0 });
        let y = (0..40).map(|i| if i % 2 == 0 { StanceLabel::Pro } else { StanceLabel::Anti }).collect();
        (x, y)
    }

    fn small() -> Hyperparams {
        Hyperparams {
            train: TrainConfig { epochs: 5, hidden_dim: 8, batch_size: 16, ..TrainConfig::default() },
            ..Hyperparams::default()
        }
    }

    #[test]
    fn model_names_parse() {
        assert_eq!(ModelKind::parse_list("all").unwrap(), ModelKind::ALL.to_vec());
        assert_eq!(
            ModelKind::parse_list("svm, gnb,svm").unwrap(),
            vec![ModelKind::SvmRbf, ModelKind::GaussianNb]
        );
        assert_eq!("Naive Bayes".parse::<ModelKind>().unwrap(), ModelKind::GaussianNb);
        assert!(ModelKind::parse_list("forest").is_err());
    }

    #[test]
    fn every_kind_round_trips_through_a_bundle() {
        let (x, y) = toy();
        let layout = Layout::decode("state:0:3").unwrap();
        let selection = FeatureSelection::parse("state").unwrap();
        let schema = CategoricalSchema::infer(&[]);
        for kind in ModelKind::ALL {
            let p = Predictor::fit(kind, x.view(), &y, &small(), 3).unwrap();
            assert_eq!(p.kind(), kind);
            let bundle = TrainedModel::new(p, schema.clone(), selection.clone(), layout.clone(), x.view()).unwrap();
            let bytes = bundle.to_checkpoint().unwrap().to_bytes().unwrap();
            let back = TrainedModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
            assert_eq!(back, bundle, "{kind}");
            assert_eq!(
                back.predictor.predict(x.view(), 0, 0).unwrap(),
                bundle.predictor.predict(x.view(), 0, 0).unwrap()
            );
        }
    }

    #[test]
    fn layout_must_match_input_width() {
        let (x, y) = toy();
        let p = Predictor::fit(ModelKind::Linear, x.view(), &y, &small(), 0).unwrap();
        let layout = Layout::decode("state:0:4").unwrap();
        let err = TrainedModel::new(p, CategoricalSchema::infer(&[]), FeatureSelection::default(), layout, x.view());
        assert!(matches!(err, Err(PipelineError::Mismatch(_))));
    }

    fn dated(n: usize) -> Corpus {
        let mut corpus = crate::synth::generate(&crate::synth::SignalSpec::null(n, 5)).unwrap();
        for (i, p) in corpus.posts.iter_mut().enumerate() {
            p.label = if i % 3 == 0 { StanceLabel::Anti } else { StanceLabel::Pro };
        }
        corpus
    }

    fn count(corpus: &Corpus, idx: &[usize], l: StanceLabel) -> usize {
        idx.iter().filter(|&&i| corpus.posts[i].label == l).count()
    }

    #[test]
    fn split_then_balance_keeps_the_whole_last_slice() {
        let corpus = dated(100);
        let (train, test) = holdout(&corpus, 10, BalanceOrder::SplitThenBalance, 4).unwrap();
        let split = chronological_split(&corpus, 10).unwrap();
        assert_eq!(test, split.test_indices());
        assert_eq!(count(&corpus, &train, StanceLabel::Anti), count(&corpus, &train, StanceLabel::Pro));
        let max_train = train.iter().map(|&i| corpus.posts[i].timestamp).max().unwrap();
        let min_test = test.iter().map(|&i| corpus.posts[i].timestamp).min().unwrap();
        assert!(max_train <= min_test);
    }

    #[test]
    fn balance_then_split_stays_inside_the_balanced_subset() {
        let corpus = dated(100);
        let (train, test) = holdout(&corpus, 5, BalanceOrder::BalanceThenSplit, 4).unwrap();
        let all: Vec<usize> = train.iter().chain(&test).copied().collect();
        assert_eq!(count(&corpus, &all, StanceLabel::Anti), count(&corpus, &all, StanceLabel::Pro));
        let max_train = train.iter().map(|&i| corpus.posts[i].timestamp).max().unwrap();
        let min_test = test.iter().map(|&i| corpus.posts[i].timestamp).min().unwrap();
        assert!(max_train <= min_test);
        assert_eq!("balance-then-split".parse::<BalanceOrder>().unwrap(), BalanceOrder::BalanceThenSplit);
    }

    #[test]
    fn single_class_training_data_is_reported() {
        let mut corpus = dated(20);
        for p in &mut corpus.posts {
            p.label = StanceLabel::Pro;
        }
        let err = holdout(&corpus, 5, BalanceOrder::SplitThenBalance, 0).unwrap_err();
        assert!(err.to_string().contains("single-class data"), "{err}");
    }

    #[test]
    fn metrics_from_a_confusion_matrix() {
        use StanceLabel::*;
        let truth = [Anti, Anti, Anti, Pro, Pro];
        let pred = [Anti, Anti, Pro, Pro, Anti];
        let m = Metrics::compute(&pred, &truth);
        assert_eq!(m.accuracy, 0.6);
        assert!((m.precision[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall[0] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.precision[1], 0.5);
        assert_eq!(m.recall[1], 0.5);
        assert!((m.macro_f1 - (2.0 / 3.0 + 0.5) / 2.0).abs() < 1e-12);
        assert_eq!(m.entries()[2].0, "precision_anti");
        let none = Metrics::compute(&[Anti, Anti], &[Anti, Anti]);
        assert_eq!(none.precision[1], 0.0);
        assert_eq!(none.f1[1], 0.0);
    }

    #[test]
    fn accuracy_counts_matches() {
        use StanceLabel::*;
        assert_eq!(accuracy(&[Anti, Pro, Pro, Anti], &[Anti, Pro, Anti, Anti]), 0.75);
        assert_eq!(accuracy(&[], &[]), 0.0);
    }
}
