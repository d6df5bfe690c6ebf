//! Shapley-value explanations of individual predictions.

mod games;
mod render;
mod shapley;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::StanceLabel;
use crate::embed::EmbedError;
use crate::model::ModelError;

pub use games::{explain_feature_groups, explain_tokens, FeatureGroupGame, TokenGame};
pub use render::{render_html, write_csv};
pub use shapley::{shapley_exact, shapley_sampled, CoalitionGame, FnGame, MAX_EXACT_PLAYERS};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("{n} players is too many for exact enumeration (limit {max}); use sampled Shapley instead")]
    TooManyPlayers { n: usize, max: usize },
    #[error("permutation count must be at least 1")]
    NoPermutations,
    #[error("text has no tokens after sanitization")]
    EmptyText,
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

pub type Result<T, E = ExplainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    FeatureGroup,
    Token,
}

/// Credit assigned to one player. `index` is the player's position in the
/// game, so token attributions can be laid back over the text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub index: usize,
    pub name: String,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    /// Record id, or a free label for abstract games.
    pub target: String,
    pub unit: Unit,
    /// Class whose probability the game values, when it comes from a model.
    pub target_class: Option<StanceLabel>,
    pub values: Vec<Contribution>,
    /// `v(∅)`.
    pub baseline_value: f64,
    /// `v(N)`.
    pub full_value: f64,
}

impl Attribution {
    pub fn phi(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len()];
        for c in &self.values {
            out[c.index] = c.phi;
        }
        out
    }

    /// `|Σφ − (v(N) − v(∅))|`.
    pub fn efficiency_gap(&self) -> f64 {
        let total: f64 = self.values.iter().map(|c| c.phi).sum();
        (total - (self.full_value - self.baseline_value)).abs()
    }

    /// Reorders contributions by decreasing `|φ|`, ties kept in player order.
    pub fn sort_by_magnitude(&mut self) {
        self.values.sort_by(|a, b| b.phi.abs().total_cmp(&a.phi.abs()).then(a.index.cmp(&b.index)));
    }
}
