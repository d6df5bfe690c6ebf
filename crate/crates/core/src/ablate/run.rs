use ndarray::{Array2, Axis};
use rayon::prelude::*;

use super::report::{AblationReport, Cell, ReportRow};
use super::{AblateError, FeatureConfig, Result};
use crate::corpus::{chronological_split, Corpus, StanceLabel};
use crate::embed::Embeddings;
use crate::pipeline::{accuracy, holdout, BalanceOrder, Hyperparams, ModelKind, Predictor};
use crate::rng::derive_seed;

/// Anything that can be trained on one slice of rows and label another.
pub trait Learner: Sync {
    /// Column heading in the report.
    fn name(&self) -> String;

    fn fit_predict(
        &self,
        train_x: ndarray::ArrayView2<f32>,
        train_y: &[StanceLabel],
        test_x: ndarray::ArrayView2<f32>,
        seed: u64,
    ) -> Result<Vec<StanceLabel>, String>;
}

/// One of the four built-in classifiers with fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct StandardLearner {
    pub kind: ModelKind,
    pub hyperparams: Hyperparams,
}

impl StandardLearner {
    pub fn new(kind: ModelKind, hyperparams: Hyperparams) -> Self {
        StandardLearner { kind, hyperparams }
    }
}

impl Learner for StandardLearner {
    fn name(&self) -> String {
        self.kind.display_name().to_owned()
    }

    fn fit_predict(
        &self,
        train_x: ndarray::ArrayView2<f32>,
        train_y: &[StanceLabel],
        test_x: ndarray::ArrayView2<f32>,
        seed: u64,
    ) -> Result<Vec<StanceLabel>, String> {
        Predictor::fit(self.kind, train_x, train_y, &self.hyperparams, seed)
            .and_then(|p| p.predict(test_x, 0, seed))
            .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixOptions {
    /// Number of chronological slices; the last one is the test set.
    pub k: usize,
    pub replicates: usize,
    pub base_seed: u64,
    pub order: BalanceOrder,
}

impl Default for MatrixOptions {
    fn default() -> Self {
        MatrixOptions { k: 10, replicates: 20, base_seed: 0, order: BalanceOrder::default() }
    }
}

type Partition = std::result::Result<(Vec<usize>, Vec<usize>), String>;

/// Train and test indices of one replicate. A split that cannot be made
/// fails the whole grid; a training set missing a class only fails the
/// replicate's cells.
fn partition(corpus: &Corpus, options: &MatrixOptions, seed: u64) -> Result<Partition> {
    chronological_split(corpus, options.k)?;
    Ok(holdout(corpus, options.k, options.order, seed).map_err(|e| e.to_string()))
}

fn summarize_cell(outcomes: &[std::result::Result<f64, String>]) -> Cell {
    let mut accs = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match o {
            Ok(a) => accs.push(*a),
            Err(e) => return Cell::Failed { error: e.clone() },
        }
    }
    let r = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / r;
    let std = if accs.len() > 1 {
        (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
    } else {
        0.0
    };
    Cell::Ok { mean, std, replicates: accs.len() }
}

/// Runs every (config, learner, replicate) cell and aggregates test
/// accuracy in percent.
///
/// Replicate `r` balances with seed `base_seed + r`; each cell trains with
/// `derive_seed(base_seed, [config, learner, r])`. Cells run in parallel and
/// a failing cell is recorded without stopping the others. The output does
/// not depend on scheduling.
pub fn run_matrix(
    corpus: &Corpus,
    embeddings: &Embeddings<'_>,
    configs: &[FeatureConfig],
    learners: &[&dyn Learner],
    options: &MatrixOptions,
) -> Result<AblationReport> {
    if configs.is_empty() {
        return Err(AblateError::NoConfigs);
    }
    if learners.is_empty() {
        return Err(AblateError::NoModels);
    }
    if options.replicates == 0 {
        return Err(AblateError::NoReplicates);
    }
    let labels = corpus.labels();
    let seeds: Vec<u64> = (0..options.replicates as u64).map(|r| options.base_seed.wrapping_add(r)).collect();
    let partitions = seeds.iter().map(|&s| partition(corpus, options, s)).collect::<Result<Vec<_>>>()?;
    let matrices = configs
        .iter()
        .map(|c| Ok(embeddings.assemble_matrix(&corpus.posts, &corpus.schema, &c.selection)?.0))
        .collect::<Result<Vec<Array2<f32>>>>()?;

    let (nc, nm, nr) = (configs.len(), learners.len(), options.replicates);
    let outcomes: Vec<std::result::Result<f64, String>> = (0..nc * nm * nr)
        .into_par_iter()
        .map(|flat| {
            let (c, rest) = (flat / (nm * nr), flat % (nm * nr));
            let (m, r) = (rest / nr, rest % nr);
            let (train, test) = partitions[r].as_ref().map_err(Clone::clone)?;
            let x = &matrices[c];
            let train_y: Vec<StanceLabel> = train.iter().map(|&i| labels[i]).collect();
            let test_y: Vec<StanceLabel> = test.iter().map(|&i| labels[i]).collect();
            let seed = derive_seed(options.base_seed, &[c as u64, m as u64, r as u64]);
            let predicted = learners[m].fit_predict(
                x.select(Axis(0), train).view(),
                &train_y,
                x.select(Axis(0), test).view(),
                seed,
            )?;
            if predicted.len() != test_y.len() {
                return Err(format!("{} predictions for {} test rows", predicted.len(), test_y.len()));
            }
            Ok(100.0 * accuracy(&predicted, &test_y))
        })
        .collect();

    let rows = configs
        .iter()
        .enumerate()
        .map(|(c, config)| ReportRow {
            group: config.group,
            config: config.name.clone(),
            cells: (0..nm).map(|m| summarize_cell(&outcomes[(c * nm + m) * nr..(c * nm + m + 1) * nr])).collect(),
        })
        .collect();
    Ok(AblationReport { models: learners.iter().map(|l| l.name()).collect(), rows, seeds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ablate::enumerate_feature_sets;
    use crate::corpus::OFFLINE_FEATURES;
    use crate::embed::{embed_corpus, HashEmbedder, OnlineField};
    use crate::synth::{generate, SignalSpec};

    struct Majority;

    impl Learner for Majority {
        fn name(&self) -> String {
            "Majority".into()
        }

        fn fit_predict(
            &self,
            _: ndarray::ArrayView2<f32>,
            train_y: &[StanceLabel],
            test_x: ndarray::ArrayView2<f32>,
            _: u64,
        ) -> Result<Vec<StanceLabel>, String> {
            let pro = train_y.iter().filter(|l| **l == StanceLabel::Pro).count();
            let label = if 2 * pro > train_y.len() { StanceLabel::Pro } else { StanceLabel::Anti };
            Ok(vec![label; test_x.nrows()])
        }
    }

    struct Failing;

    impl Learner for Failing {
        fn name(&self) -> String {
            "Broken".into()
        }

        fn fit_predict(
            &self,
            _: ndarray::ArrayView2<f32>,
            _: &[StanceLabel],
            _: ndarray::ArrayView2<f32>,
            _: u64,
        ) -> Result<Vec<StanceLabel>, String> {
            Err("diverged".into())
        }
    }

    /// A corpus whose last tenth is exactly balanced.
    fn fixture() -> Corpus {
        let mut corpus = generate(&SignalSpec::null(200, 5)).unwrap();
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.sort_by_key(|&i| (corpus.posts[i].timestamp, corpus.posts[i].id.clone()));
        for (rank, &i) in order.iter().enumerate() {
            if rank >= 180 {
                corpus.posts[i].label = if rank % 2 == 0 { StanceLabel::Pro } else { StanceLabel::Anti };
            }
        }
        corpus
    }

    fn run(corpus: &Corpus, learners: &[&dyn Learner], replicates: usize) -> AblationReport {
        let e = HashEmbedder::new(16, 0);
        let t = embed_corpus(corpus, OnlineField::Tweet, &e).unwrap();
        let d = embed_corpus(corpus, OnlineField::Description, &e).unwrap();
        let emb = Embeddings { tweet: Some(&t), description: Some(&d) };
        let configs = enumerate_feature_sets(&OFFLINE_FEATURES, &OnlineField::ALL);
        let options = MatrixOptions { k: 10, replicates, base_seed: 11, order: BalanceOrder::default() };
        run_matrix(corpus, &emb, &configs, learners, &options).unwrap()
    }

    #[test]
    fn majority_stub_scores_fifty_on_a_balanced_test_slice() {
        let report = run(&fixture(), &[&Majority], 3);
        assert_eq!(report.rows.len(), 9);
        assert_eq!(report.seeds, vec![11, 12, 13]);
        for row in &report.rows {
            assert_eq!(row.cells, vec![Cell::Ok { mean: 50.0, std: 0.0, replicates: 3 }]);
        }
    }

    #[test]
    fn failed_cells_do_not_stop_the_grid() {
        let report = run(&fixture(), &[&Failing, &Majority], 1);
        for row in &report.rows {
            assert_eq!(row.cells[0], Cell::Failed { error: "diverged".into() });
            assert!(matches!(row.cells[1], Cell::Ok { replicates: 1, std, .. } if std == 0.0));
        }
    }

    #[test]
    fn real_learners_are_deterministic() {
        let corpus = fixture();
        let hp = Hyperparams::default();
        let lin = StandardLearner::new(ModelKind::Linear, hp.clone());
        let nb = StandardLearner::new(ModelKind::GaussianNb, hp);
        let a = run(&corpus, &[&lin, &nb], 2);
        let b = run(&corpus, &[&lin, &nb], 2);
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a.models, ["Linear", "Naive Bayes"]);
    }

    #[test]
    fn sample_std_over_replicates() {
        let cell = summarize_cell(&[Ok(50.0), Ok(60.0), Ok(70.0)]);
        assert_eq!(cell, Cell::Ok { mean: 60.0, std: 10.0, replicates: 3 });
        assert_eq!(summarize_cell(&[Ok(42.0)]), Cell::Ok { mean: 42.0, std: 0.0, replicates: 1 });
    }
}
