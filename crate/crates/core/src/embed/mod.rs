//! Text features and fused model inputs.

mod cvxe;
mod fuse;
mod hashing;

use thiserror::Error;

use crate::corpus::{sanitize_text, Corpus, CorpusError};

pub use cvxe::{read_embeddings, write_embeddings, EmbeddingMatrix};
pub use fuse::{assemble_features, Embeddings, FeatureSelection, FusedVector, Layout, OnlineField, Segment};
pub use hashing::{hash_embed, HashEmbedder, TextEmbedder};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error(transparent)]
    Io(std::io::Error),
    #[error("bad magic {0:?}, not a CVXE file")]
    BadMagic([u8; 4]),
    #[error("unsupported CVXE version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated {0}")]
    Truncated(&'static str),
    #[error("dim must be positive")]
    ZeroDim,
    #[error("count mismatch: {ids} ids but {rows} rows")]
    CountMismatch { ids: usize, rows: usize },
    #[error("row length mismatch at {id:?}: expected {expected}")]
    RowLength { id: String, expected: usize },
    #[error("non-finite value for {id:?} at column {column}")]
    NonFinite { id: String, column: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("id is not valid UTF-8")]
    InvalidId,
    #[error("id {0:?} longer than 65535 bytes")]
    IdTooLong(String),
    #[error("no features selected")]
    NoFeatures,
    #[error("record {id:?} has no {segment} embedding")]
    MissingRow { id: String, segment: &'static str },
    #[error("unknown feature segment {0:?}")]
    UnknownSegment(String),
    #[error("malformed layout entry {0:?}")]
    BadLayout(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub type Result<T, E = EmbedError> = std::result::Result<T, E>;

/// Embeds one text field of every post (after sanitization), in corpus order.
pub fn embed_corpus(corpus: &Corpus, field: OnlineField, embedder: &dyn TextEmbedder) -> Result<EmbeddingMatrix> {
    let ids = corpus.posts.iter().map(|p| p.id.clone()).collect();
    let mut data = Vec::with_capacity(corpus.len() * embedder.dim());
    for post in &corpus.posts {
        data.extend(embedder.embed(&sanitize_text(field.text(post))));
    }
    EmbeddingMatrix::new(ids, embedder.dim(), data, embedder.source_tag())
}
