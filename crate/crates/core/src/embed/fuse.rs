use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingMatrix, Result};
use crate::corpus::{CategoricalSchema, RawPost};

/// The two text fields a post contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnlineField {
    Tweet,
    Description,
}

impl OnlineField {
    pub const ALL: [OnlineField; 2] = [OnlineField::Tweet, OnlineField::Description];

    pub fn name(self) -> &'static str {
        match self {
            OnlineField::Tweet => "tweet",
            OnlineField::Description => "description",
        }
    }

    pub fn text(self, post: &RawPost) -> &str {
        match self {
            OnlineField::Tweet => &post.text,
            OnlineField::Description => &post.description,
        }
    }
}

impl FromStr for OnlineField {
    type Err = EmbedError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tweet" | "text" => Ok(OnlineField::Tweet),
            "description" => Ok(OnlineField::Description),
            other => Err(EmbedError::UnknownSegment(other.to_owned())),
        }
    }
}

/// Which segments feed a model. Segments always appear in canonical order:
/// tweet, description, then offline features in schema order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub online: Vec<OnlineField>,
    pub offline: Vec<String>,
}

impl FeatureSelection {
    pub fn new(mut online: Vec<OnlineField>, offline: Vec<String>) -> Self {
        online.sort();
        online.dedup();
        FeatureSelection { online, offline }
    }

    pub fn is_empty(&self) -> bool {
        self.online.is_empty() && self.offline.is_empty()
    }

    pub fn uses(&self, field: OnlineField) -> bool {
        self.online.contains(&field)
    }

    pub fn offline_refs(&self) -> Vec<&str> {
        self.offline.iter().map(String::as_str).collect()
    }

    /// Parses a comma-separated list such as `tweet,description,state`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut online = Vec::new();
        let mut offline = Vec::new();
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.parse::<OnlineField>() {
                Ok(f) => online.push(f),
                Err(_) if crate::corpus::OFFLINE_FEATURES.contains(&item) => offline.push(item.to_owned()),
                Err(e) => return Err(e),
            }
        }
        Ok(Self::new(online, offline))
    }
}

impl fmt::Display for FeatureSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self
            .online
            .iter()
            .map(|o| o.name())
            .chain(self.offline.iter().map(String::as_str))
            .collect();
        f.write_str(&names.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Contiguous, exhaustive segment table of a fused vector.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub segments: Vec<Segment>,
}

impl Layout {
    fn push(&mut self, name: &str, len: usize) {
        let offset = self.total();
        self.segments.push(Segment { name: name.to_owned(), offset, len });
    }

    pub fn total(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Compact text form, `name:offset:len` joined by commas.
    pub fn encode(&self) -> String {
        self.segments
            .iter()
            .map(|s| format!("{}:{}:{}", s.name, s.offset, s.len))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn decode(text: &str) -> Result<Self> {
        let mut layout = Layout::default();
        for part in text.split(',').filter(|s| !s.is_empty()) {
            let fields: Vec<&str> = part.split(':').collect();
            let parsed = match fields.as_slice() {
                [name, offset, len] => offset.parse().ok().zip(len.parse().ok()).map(|(o, l)| (*name, o, l)),
                _ => None,
            };
            let (name, offset, len): (&str, usize, usize) =
                parsed.ok_or_else(|| EmbedError::BadLayout(part.to_owned()))?;
            if offset != layout.total() {
                return Err(EmbedError::BadLayout(part.to_owned()));
            }
            layout.push(name, len);
        }
        Ok(layout)
    }
}

/// One model input vector with its segment table.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedVector {
    pub values: Vec<f32>,
    pub layout: Layout,
}

/// Concatenates the selected text embeddings and one-hot blocks of `post`.
pub fn assemble_features(
    post: &RawPost,
    tweet_emb: Option<&[f32]>,
    desc_emb: Option<&[f32]>,
    schema: &CategoricalSchema,
    selection: &FeatureSelection,
) -> Result<FusedVector> {
    if selection.is_empty() {
        return Err(EmbedError::NoFeatures);
    }
    let mut values = Vec::new();
    let mut layout = Layout::default();
    for field in OnlineField::ALL {
        if !selection.uses(field) {
            continue;
        }
        let row = match field {
            OnlineField::Tweet => tweet_emb,
            OnlineField::Description => desc_emb,
        }
        .ok_or_else(|| EmbedError::MissingRow { id: post.id.clone(), segment: field.name() })?;
        values.extend_from_slice(row);
        layout.push(field.name(), row.len());
    }
    let offline = selection.offline_refs();
    // validates the selection against the schema before iterating
    schema.width(&offline)?;
    for feature in schema.selected(&offline) {
        let block = schema.encode_onehot(post, &[feature.name.as_str()])?;
        layout.push(&feature.name, block.len());
        values.extend(block);
    }
    Ok(FusedVector { values, layout })
}

/// Text embeddings available to the assembler, one matrix per field.
#[derive(Debug, Clone, Copy, Default)]
pub struct Embeddings<'a> {
    pub tweet: Option<&'a EmbeddingMatrix>,
    pub description: Option<&'a EmbeddingMatrix>,
}

impl<'a> Embeddings<'a> {
    fn row(&self, field: OnlineField, id: &str) -> Option<&'a [f32]> {
        match field {
            OnlineField::Tweet => self.tweet.and_then(|m| m.row(id)),
            OnlineField::Description => self.description.and_then(|m| m.row(id)),
        }
    }

    /// Fused vector of a single post.
    pub fn assemble(&self, post: &RawPost, schema: &CategoricalSchema, selection: &FeatureSelection) -> Result<FusedVector> {
        assemble_features(
            post,
            self.row(OnlineField::Tweet, &post.id),
            self.row(OnlineField::Description, &post.id),
            schema,
            selection,
        )
    }

    /// Stacks the fused vectors of `posts` into a row-major matrix.
    pub fn assemble_matrix<'p>(
        &self,
        posts: impl IntoIterator<Item = &'p RawPost>,
        schema: &CategoricalSchema,
        selection: &FeatureSelection,
    ) -> Result<(Array2<f32>, Layout)> {
        let mut data = Vec::new();
        let mut layout: Option<Layout> = None;
        let mut rows = 0;
        for post in posts {
            let fused = self.assemble(post, schema, selection)?;
            match &layout {
                Some(l) if *l != fused.layout => {
                    return Err(EmbedError::RowLength { id: post.id.clone(), expected: l.total() })
                }
                Some(_) => {}
                None => layout = Some(fused.layout.clone()),
            }
            data.extend(fused.values);
            rows += 1;
        }
        let layout = match layout {
            Some(l) => l,
            None => empty_layout(self, schema, selection)?,
        };
        let x = Array2::from_shape_vec((rows, layout.total()), data).expect("rows share one layout");
        Ok((x, layout))
    }
}

fn empty_layout(emb: &Embeddings<'_>, schema: &CategoricalSchema, selection: &FeatureSelection) -> Result<Layout> {
    let mut layout = Layout::default();
    for field in OnlineField::ALL.into_iter().filter(|f| selection.uses(*f)) {
        let m = match field {
            OnlineField::Tweet => emb.tweet,
            OnlineField::Description => emb.description,
        };
        let dim = m.map(EmbeddingMatrix::dim).ok_or(EmbedError::NoFeatures)?;
        layout.push(field.name(), dim);
    }
    let offline = selection.offline_refs();
    schema.width(&offline)?;
    for f in schema.selected(&offline) {
        layout.push(&f.name, f.width());
    }
    Ok(layout)
}
