use std::hash::Hasher;

use twox_hash::XxHash64;

/// Anything that maps a (sanitized) text to a fixed-width vector.
pub trait TextEmbedder: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f32>;
    fn source_tag(&self) -> String;
}

/// Signed feature hashing over lowercase word unigrams and bigrams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 2, "hashing embedder needs dim >= 2");
        HashEmbedder { dim, seed }
    }
}

impl TextEmbedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f32> {
        hash_embed(text, self.dim, self.seed)
    }

    fn source_tag(&self) -> String {
        format!("hashing-v1;dim={};seed={}", self.dim, self.seed)
    }
}

fn bucket(feature: &str, dim: usize, seed: u64) -> (usize, f64) {
    let mut h = XxHash64::with_seed(seed);
    h.write(feature.as_bytes());
    let h = h.finish();
    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
    ((h % dim as u64) as usize, sign)
}

/// Hashes the words and adjacent word pairs of `text` into a signed count
/// vector of length `dim`, then scales it to unit L2 norm (an empty text
/// yields the zero vector).
pub fn hash_embed(text: &str, dim: usize, seed: u64) -> Vec<f32> {
    assert!(dim >= 2, "hashing embedder needs dim >= 2");
    let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    let mut acc = vec![0.0f64; dim];
    for w in &words {
        let (i, s) = bucket(w, dim, seed);
        acc[i] += s;
    }
    for pair in words.windows(2) {
        // unigrams never contain a space, so bigram keys cannot collide with them
        let (i, s) = bucket(&format!("{} {}", pair[0], pair[1]), dim, seed);
        acc[i] += s;
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        acc.iter_mut().for_each(|v| *v /= norm);
    }
    acc.into_iter().map(|v| v as f32).collect()
}
