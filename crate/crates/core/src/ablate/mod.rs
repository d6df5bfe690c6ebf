//! Feature-set ablation: which input modalities a model sees, run over a
//! grid of (feature set × model × replicate), summarized as mean ± std
//! accuracy per cell.

mod report;
mod run;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusError;
use crate::embed::{EmbedError, FeatureSelection, OnlineField};

pub use report::{render_markdown, AblationReport, Cell, ReportRow};
pub use run::{run_matrix, Learner, MatrixOptions, StandardLearner};

#[derive(Debug, Error)]
pub enum AblateError {
    #[error("no feature configurations to run")]
    NoConfigs,
    #[error("no models to run")]
    NoModels,
    #[error("replicate count must be positive")]
    NoReplicates,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("malformed report at row {row}: {message}")]
    Malformed { row: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = AblateError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    Online,
    Offline,
    Hybrid,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::Online => "Online",
            Group::Offline => "Offline",
            Group::Hybrid => "Hybrid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Group::Online, Group::Offline, Group::Hybrid].into_iter().find(|g| g.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One row of the ablation grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub name: String,
    pub group: Group,
    pub selection: FeatureSelection,
}

impl FeatureConfig {
    /// Builds a config, deriving the group from which modalities are used.
    pub fn new(name: impl Into<String>, selection: FeatureSelection) -> Option<Self> {
        let group = match (selection.online.is_empty(), selection.offline.is_empty()) {
            (false, true) => Group::Online,
            (true, false) => Group::Offline,
            (false, false) => Group::Hybrid,
            (true, true) => return None,
        };
        Some(FeatureConfig { name: name.into(), group, selection })
    }
}

fn online_label(field: OnlineField) -> &'static str {
    match field {
        OnlineField::Tweet => "Tweets",
        OnlineField::Description => "Description",
    }
}

fn offline_label(feature: &str) -> String {
    let mut chars = feature.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Every 3-element subset of `0..n`, in lexicographic order.
fn triples(n: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                out.push([a, b, c]);
            }
        }
    }
    out
}

/// The grid rows: each online field alone, all online, every offline triple,
/// all offline, then everything together. With fewer than three offline
/// features the triples are skipped.
pub fn enumerate_feature_sets(offline: &[&str], online: &[OnlineField]) -> Vec<FeatureConfig> {
    let mut configs = Vec::new();
    let all_online = FeatureSelection::new(online.to_vec(), Vec::new());
    let all_offline = FeatureSelection::new(Vec::new(), offline.iter().map(|s| s.to_string()).collect());

    for &field in online {
        configs.extend(FeatureConfig::new(online_label(field), FeatureSelection::new(vec![field], Vec::new())));
    }
    configs.extend(FeatureConfig::new("All", all_online.clone()));

    if offline.len() < 3 {
        log::warn!("only {} offline features; skipping the three-feature subsets", offline.len());
    } else {
        for t in triples(offline.len()) {
            let chosen: Vec<&str> = t.iter().map(|&i| offline[i]).collect();
            let name = chosen.iter().map(|f| offline_label(f)).collect::<Vec<_>>().join("+");
            let selection = FeatureSelection::new(Vec::new(), chosen.iter().map(|s| s.to_string()).collect());
            configs.extend(FeatureConfig::new(name, selection));
        }
    }
    configs.extend(FeatureConfig::new("All", all_offline.clone()));
    configs.extend(FeatureConfig::new(
        "Online+Offline",
        FeatureSelection::new(all_online.online, all_offline.offline),
    ));
    configs
}
