use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::{CorpusError, RawPost, Result};

/// Offline attributes carried by every record, in canonical order.
pub const OFFLINE_FEATURES: [&str; 4] = ["state", "race", "race_pic", "gender"];

/// What to do with a categorical value the schema has never seen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownPolicy {
    /// Reserve one trailing slot per feature for unseen values.
    #[default]
    ExtraSlot,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalFeature {
    pub name: String,
    pub categories: Vec<String>,
    #[serde(default)]
    pub unknown_policy: UnknownPolicy,
}

impl CategoricalFeature {
    /// Number of one-hot slots this feature occupies.
    pub fn width(&self) -> usize {
        self.categories.len() + usize::from(self.unknown_policy == UnknownPolicy::ExtraSlot)
    }

    /// Slot index for `value`, or `None` when it is unseen and rejected.
    pub fn slot(&self, value: &str) -> Option<usize> {
        match self.categories.iter().position(|c| c == value) {
            Some(i) => Some(i),
            None if self.unknown_policy == UnknownPolicy::ExtraSlot => Some(self.categories.len()),
            None => None,
        }
    }
}

/// Ordered category lists for the offline features; fixes every one-hot
/// layout used downstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalSchema {
    pub features: Vec<CategoricalFeature>,
}

impl CategoricalSchema {
    pub fn new(features: Vec<CategoricalFeature>) -> Result<Self> {
        let mut names = HashSet::new();
        for f in &features {
            if !OFFLINE_FEATURES.contains(&f.name.as_str()) {
                return Err(CorpusError::InvalidSchema(format!("{:?} is not an offline attribute", f.name)));
            }
            if !names.insert(f.name.as_str()) {
                return Err(CorpusError::InvalidSchema(format!("feature {:?} listed twice", f.name)));
            }
            if f.categories.is_empty() {
                return Err(CorpusError::InvalidSchema(format!("feature {:?} has no categories", f.name)));
            }
            let unique: HashSet<_> = f.categories.iter().collect();
            if unique.len() != f.categories.len() {
                return Err(CorpusError::InvalidSchema(format!("feature {:?} has duplicate categories", f.name)));
            }
        }
        Ok(CategoricalSchema { features })
    }

    /// Builds a schema from the categories observed in `posts`, sorted
    /// lexicographically, with the extra-slot policy.
    pub fn infer(posts: &[RawPost]) -> Self {
        let features = OFFLINE_FEATURES
            .iter()
            .map(|&name| {
                let seen: BTreeSet<&str> = posts.iter().filter_map(|p| p.category(name)).collect();
                let mut categories: Vec<String> = seen.into_iter().map(str::to_owned).collect();
                if categories.is_empty() {
                    categories.push("unknown".to_owned());
                }
                CategoricalFeature { name: name.to_owned(), categories, unknown_policy: UnknownPolicy::ExtraSlot }
            })
            .collect();
        CategoricalSchema { features }
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let raw: CategoricalSchema =
            serde_json::from_str(json).map_err(|e| CorpusError::InvalidSchema(e.to_string()))?;
        Self::new(raw.features)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn feature(&self, name: &str) -> Option<&CategoricalFeature> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    /// Total one-hot width of the selected features.
    pub fn width(&self, selected: &[&str]) -> Result<usize> {
        self.check_selection(selected)?;
        Ok(self.selected(selected).map(CategoricalFeature::width).sum())
    }

    pub(crate) fn check_post(&self, post: &RawPost) -> Result<()> {
        for f in &self.features {
            let value = post.category(&f.name).unwrap_or_default();
            if f.slot(value).is_none() {
                return Err(CorpusError::UnknownCategory { feature: f.name.clone(), value: value.to_owned() });
            }
        }
        Ok(())
    }

    fn check_selection(&self, selected: &[&str]) -> Result<()> {
        match selected.iter().find(|s| self.feature(s).is_none()) {
            Some(missing) => Err(CorpusError::UnknownFeature((*missing).to_owned())),
            None => Ok(()),
        }
    }

    /// Selected features in schema order, regardless of selection order.
    pub fn selected<'a>(&'a self, selected: &'a [&str]) -> impl Iterator<Item = &'a CategoricalFeature> + 'a {
        self.features.iter().filter(move |f| selected.contains(&f.name.as_str()))
    }

    /// Concatenated one-hot blocks of the selected features, in schema order.
    pub fn encode_onehot(&self, post: &RawPost, selected: &[&str]) -> Result<Vec<f32>> {
        self.check_selection(selected)?;
        let mut out = Vec::with_capacity(self.width(selected)?);
        for f in self.selected(selected) {
            let value = post.category(&f.name).unwrap_or_default();
            let slot = f
                .slot(value)
                .ok_or_else(|| CorpusError::UnknownCategory { feature: f.name.clone(), value: value.to_owned() })?;
            let start = out.len();
            out.resize(start + f.width(), 0.0);
            out[start + slot] = 1.0;
        }
        Ok(out)
    }
}

/// Free-function form of [`CategoricalSchema::encode_onehot`].
pub fn encode_onehot(post: &RawPost, schema: &CategoricalSchema, selected: &[&str]) -> Result<Vec<f32>> {
    schema.encode_onehot(post, selected)
}
