use ndarray::Array2;

use super::{shapley_exact, shapley_sampled, Attribution, CoalitionGame, ExplainError, Result, Unit};
use crate::corpus::{sanitize_text, RawPost, StanceLabel};
use crate::embed::{FusedVector, Layout, OnlineField, TextEmbedder};
use crate::model::{softmax, ModelParams};

fn check_model(params: &ModelParams<f32>, layout: &Layout) -> Result<()> {
    if params.arch.input_dim != layout.total() {
        return Err(ExplainError::LayoutMismatch(format!(
            "model expects {} inputs, layout has {}",
            params.arch.input_dim,
            layout.total()
        )));
    }
    Ok(())
}

/// Eval-mode probability of `class` for every row.
fn class_probs(params: &ModelParams<f32>, x: Array2<f32>, class: StanceLabel) -> Vec<f64> {
    let logits = params.logits(x.view()).expect("input width checked against the model");
    logits.rows().into_iter().map(|r| f64::from(softmax(r.as_slice().expect("contiguous"))[class.index()])).collect()
}

/// Players are layout segments; a segment outside the coalition is replaced
/// by its baseline values.
pub struct FeatureGroupGame<'a> {
    params: &'a ModelParams<f32>,
    input: &'a FusedVector,
    baseline: &'a [f32],
    class: StanceLabel,
}

impl<'a> FeatureGroupGame<'a> {
    pub fn new(
        params: &'a ModelParams<f32>,
        input: &'a FusedVector,
        baseline: &'a [f32],
        class: StanceLabel,
    ) -> Result<Self> {
        check_model(params, &input.layout)?;
        if input.values.len() != input.layout.total() || baseline.len() != input.layout.total() {
            return Err(ExplainError::LayoutMismatch(format!(
                "input has {} values and baseline {}, layout expects {}",
                input.values.len(),
                baseline.len(),
                input.layout.total()
            )));
        }
        Ok(FeatureGroupGame { params, input, baseline, class })
    }
}

impl CoalitionGame for FeatureGroupGame<'_> {
    fn n_players(&self) -> usize {
        self.input.layout.segments.len()
    }

    fn player_names(&self) -> Vec<String> {
        self.input.layout.segments.iter().map(|s| s.name.clone()).collect()
    }

    fn value(&self, coalition: &[bool]) -> f64 {
        self.values(&[coalition.to_vec()])[0]
    }

    fn values(&self, coalitions: &[Vec<bool>]) -> Vec<f64> {
        let d = self.input.layout.total();
        let mut x = Array2::zeros((coalitions.len(), d));
        for (mut row, mask) in x.rows_mut().into_iter().zip(coalitions) {
            for (seg, &present) in self.input.layout.segments.iter().zip(mask) {
                let src = if present { &self.input.values } else { self.baseline };
                for k in seg.offset..seg.offset + seg.len {
                    row[k] = src[k];
                }
            }
        }
        class_probs(self.params, x, self.class)
    }
}

/// Exact Shapley values of each feature segment for the probability of
/// `class`, against a baseline input (typically the training-set mean).
pub fn explain_feature_groups(
    params: &ModelParams<f32>,
    id: &str,
    input: &FusedVector,
    baseline: &[f32],
    class: StanceLabel,
) -> Result<Attribution> {
    let game = FeatureGroupGame::new(params, input, baseline, class)?;
    let mut a = shapley_exact(&game, Unit::FeatureGroup)?;
    a.target = id.to_owned();
    a.target_class = Some(class);
    Ok(a)
}

/// Players are the whitespace tokens of the sanitized tweet text; a
/// coalition's text keeps only its tokens, in original order, and is
/// re-embedded into the tweet segment.
pub struct TokenGame<'a> {
    params: &'a ModelParams<f32>,
    input: &'a FusedVector,
    embedder: &'a dyn TextEmbedder,
    tokens: Vec<String>,
    offset: usize,
    class: StanceLabel,
}

impl<'a> TokenGame<'a> {
    pub fn new(
        params: &'a ModelParams<f32>,
        input: &'a FusedVector,
        text: &str,
        embedder: &'a dyn TextEmbedder,
        class: StanceLabel,
    ) -> Result<Self> {
        check_model(params, &input.layout)?;
        let seg = input
            .layout
            .segment(OnlineField::Tweet.name())
            .ok_or_else(|| ExplainError::LayoutMismatch("no tweet segment to explain".into()))?;
        if seg.len != embedder.dim() {
            return Err(ExplainError::LayoutMismatch(format!(
                "tweet segment has {} columns, embedder produces {}",
                seg.len,
                embedder.dim()
            )));
        }
        let tokens: Vec<String> = sanitize_text(text).split_whitespace().map(str::to_owned).collect();
        if tokens.is_empty() {
            return Err(ExplainError::EmptyText);
        }
        Ok(TokenGame { params, input, embedder, tokens, offset: seg.offset, class })
    }
}

impl CoalitionGame for TokenGame<'_> {
    fn n_players(&self) -> usize {
        self.tokens.len()
    }

    fn player_names(&self) -> Vec<String> {
        self.tokens.clone()
    }

    fn value(&self, coalition: &[bool]) -> f64 {
        self.values(&[coalition.to_vec()])[0]
    }

    fn values(&self, coalitions: &[Vec<bool>]) -> Vec<f64> {
        let d = self.input.layout.total();
        let mut x = Array2::zeros((coalitions.len(), d));
        for (mut row, mask) in x.rows_mut().into_iter().zip(coalitions) {
            row.as_slice_mut().expect("contiguous").copy_from_slice(&self.input.values);
            let kept: Vec<&str> =
                self.tokens.iter().zip(mask).filter(|(_, &keep)| keep).map(|(t, _)| t.as_str()).collect();
            let emb = self.embedder.embed(&kept.join(" "));
            for (k, v) in emb.into_iter().enumerate() {
                row[self.offset + k] = v;
            }
        }
        class_probs(self.params, x, self.class)
    }
}

/// Permutation-sampled Shapley values of the tweet tokens of `post`, sorted
/// by decreasing magnitude.
pub fn explain_tokens(
    params: &ModelParams<f32>,
    post: &RawPost,
    input: &FusedVector,
    embedder: &dyn TextEmbedder,
    class: StanceLabel,
    permutations: usize,
    seed: u64,
) -> Result<Attribution> {
    let game = TokenGame::new(params, input, &post.text, embedder, class)?;
    let mut a = shapley_sampled(&game, Unit::Token, permutations, seed)?;
    a.target = post.id.clone();
    a.target_class = Some(class);
    a.sort_by_magnitude();
    Ok(a)
}
