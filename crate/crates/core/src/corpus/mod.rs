//! Labeled post records, their categorical schema, and the dataset
//! operations that run before any features are computed.

mod schema;
mod split;
mod text;

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use schema::{encode_onehot, CategoricalFeature, CategoricalSchema, UnknownPolicy, OFFLINE_FEATURES};
pub use split::{balance_sample, balanced_subset, chronological_split, TimeSlices};
pub use text::{sanitize_text, HASHTAG_TOKEN, URL_TOKEN};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown label {label:?} (expected \"anti\" or \"pro\")")]
    UnknownLabel { line: usize, label: String },
    #[error("unknown category {value:?} for feature {feature:?}")]
    UnknownCategory { feature: String, value: String },
    #[error("feature {0:?} is not part of the schema")]
    UnknownFeature(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("cannot cut {n} posts into {k} slices")]
    InvalidSliceCount { k: usize, n: usize },
    #[error("corpus is empty")]
    Empty,
    #[error("single-class data: no {missing} posts")]
    SingleClass { missing: StanceLabel },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// Binary vaccine stance. The discriminant doubles as the class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StanceLabel {
    Anti = 0,
    Pro = 1,
}

impl StanceLabel {
    pub const ALL: [StanceLabel; 2] = [StanceLabel::Anti, StanceLabel::Pro];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        match index {
            0 => Some(StanceLabel::Anti),
            1 => Some(StanceLabel::Pro),
            _ => None,
        }
    }

    /// `+1` for Pro, `-1` for Anti.
    pub fn sign(self) -> f64 {
        match self {
            StanceLabel::Anti => -1.0,
            StanceLabel::Pro => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StanceLabel::Anti => "anti",
            StanceLabel::Pro => "pro",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "anti" => Some(StanceLabel::Anti),
            "pro" => Some(StanceLabel::Pro),
            _ => None,
        }
    }
}

impl fmt::Display for StanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One labeled record: the online text fields plus the offline categorical
/// attributes of its author.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPost {
    pub id: String,
    pub timestamp: i64,
    pub text: String,
    pub description: String,
    pub state: String,
    pub race: String,
    pub race_pic: String,
    pub gender: String,
    pub label: StanceLabel,
}

impl RawPost {
    /// Value of an offline attribute by its schema name.
    pub fn category(&self, feature: &str) -> Option<&str> {
        match feature {
            "state" => Some(&self.state),
            "race" => Some(&self.race),
            "race_pic" => Some(&self.race_pic),
            "gender" => Some(&self.gender),
            _ => None,
        }
    }
}

/// How the schema of an ingested corpus is obtained.
#[derive(Debug, Clone)]
pub enum SchemaMode {
    Given(CategoricalSchema),
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub posts: Vec<RawPost>,
    pub schema: CategoricalSchema,
    pub provenance: String,
}

impl Corpus {
    /// Validates id uniqueness, timestamps, and that every categorical value
    /// is either in the schema or absorbed by its unknown policy.
    pub fn new(posts: Vec<RawPost>, schema: CategoricalSchema, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(posts.len());
        for (i, post) in posts.iter().enumerate() {
            validate_post(post, i + 1)?;
            if !seen.insert(post.id.as_str()) {
                return Err(CorpusError::DuplicateId { line: i + 1, id: post.id.clone() });
            }
            schema.check_post(post)?;
        }
        Ok(Corpus { posts, schema, provenance: provenance.into() })
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn labels(&self) -> Vec<StanceLabel> {
        self.posts.iter().map(|p| p.label).collect()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for p in &self.posts {
            counts[p.label.index()] += 1;
        }
        counts
    }

    /// A corpus restricted to the given post indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            posts: indices.iter().map(|&i| self.posts[i].clone()).collect(),
            schema: self.schema.clone(),
            provenance: self.provenance.clone(),
        }
    }
}

fn validate_post(post: &RawPost, line: usize) -> Result<()> {
    if post.id.is_empty() {
        return Err(CorpusError::Malformed { line, message: "empty id".into() });
    }
    if post.timestamp < 0 {
        return Err(CorpusError::Malformed {
            line,
            message: format!("negative timestamp {}", post.timestamp),
        });
    }
    Ok(())
}

/// Wire shape of one JSON-Lines record. The label stays a string so an
/// unknown value is reported as such rather than as a generic parse error.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    timestamp: i64,
    text: String,
    description: String,
    state: String,
    race: String,
    race_pic: String,
    gender: String,
    label: String,
}

/// Parses JSON-Lines records from any reader. Blank lines are skipped.
pub fn parse_records<R: BufRead>(reader: R) -> Result<Vec<RawPost>> {
    let mut posts = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Malformed { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Malformed { line: line_no, message: e.to_string() })?;
        let label = StanceLabel::parse(&rec.label)
            .ok_or_else(|| CorpusError::UnknownLabel { line: line_no, label: rec.label.clone() })?;
        let post = RawPost {
            id: rec.id,
            timestamp: rec.timestamp,
            text: rec.text,
            description: rec.description,
            state: rec.state,
            race: rec.race,
            race_pic: rec.race_pic,
            gender: rec.gender,
            label,
        };
        validate_post(&post, line_no)?;
        if !seen.insert(post.id.clone()) {
            return Err(CorpusError::DuplicateId { line: line_no, id: post.id });
        }
        posts.push(post);
    }
    Ok(posts)
}

/// Reads a JSON-Lines corpus file.
pub fn ingest_records(path: &Path, mode: SchemaMode) -> Result<Corpus> {
    let file = File::open(path).map_err(|source| CorpusError::Io { path: path.to_owned(), source })?;
    let posts = parse_records(BufReader::new(file))?;
    let schema = match mode {
        SchemaMode::Given(schema) => schema,
        SchemaMode::Infer => CategoricalSchema::infer(&posts),
    };
    Corpus::new(posts, schema, path.display().to_string())
}

/// Writes posts in the JSON-Lines record format, one object per line.
pub fn write_records<W: Write>(posts: &[RawPost], writer: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    for post in posts {
        serde_json::to_writer(&mut w, post)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
