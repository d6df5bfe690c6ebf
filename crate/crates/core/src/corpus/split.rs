use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;

use super::{Corpus, CorpusError, Result, StanceLabel};
use crate::rng;

/// A chronological partition of a corpus into `k` equal-count slices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeSlices {
    pub k: usize,
    /// First timestamp of each slice, followed by the last timestamp of the
    /// final slice (`k + 1` entries, non-decreasing).
    pub boundaries: Vec<i64>,
    /// Post indices (into the source corpus) of each slice, in time order.
    pub slices: Vec<Vec<usize>>,
    assignment: HashMap<String, usize>,
}

impl TimeSlices {
    /// Slice index of a post id.
    pub fn slice_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.slices.iter().map(Vec::len).collect()
    }

    /// Index of the held-out evaluation slice.
    pub fn eval_slice(&self) -> usize {
        self.k - 1
    }

    /// Post indices of every slice before the evaluation slice.
    pub fn train_indices(&self) -> Vec<usize> {
        self.slices[..self.k - 1].iter().flatten().copied().collect()
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.slices[self.k - 1]
    }

    /// Writes the `id,slice` manifest in chronological order.
    pub fn write_manifest<W: Write>(&self, corpus: &Corpus, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "slice"])?;
        for (s, slice) in self.slices.iter().enumerate() {
            for &i in slice {
                w.write_record([corpus.posts[i].id.as_str(), &s.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Sorts posts by `(timestamp, id)` and cuts them into `k` contiguous slices
/// of `⌊N/k⌋` posts, the first `N mod k` slices taking one extra.
pub fn chronological_split(corpus: &Corpus, k: usize) -> Result<TimeSlices> {
    let n = corpus.len();
    if n == 0 {
        return Err(CorpusError::Empty);
    }
    if k == 0 || k > n {
        return Err(CorpusError::InvalidSliceCount { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&corpus.posts[a], &corpus.posts[b]);
        pa.timestamp.cmp(&pb.timestamp).then_with(|| pa.id.cmp(&pb.id))
    });

    let (base, extra) = (n / k, n % k);
    let mut slices = Vec::with_capacity(k);
    let mut start = 0;
    for s in 0..k {
        let len = base + usize::from(s < extra);
        slices.push(order[start..start + len].to_vec());
        start += len;
    }

    let mut boundaries: Vec<i64> = slices.iter().map(|s| corpus.posts[s[0]].timestamp).collect();
    boundaries.push(corpus.posts[order[n - 1]].timestamp);

    let assignment = slices
        .iter()
        .enumerate()
        .flat_map(|(s, idx)| idx.iter().map(move |&i| (corpus.posts[i].id.clone(), s)))
        .collect();

    Ok(TimeSlices { k, boundaries, slices, assignment })
}

/// Picks a class-balanced subset of positions into `labels`: every minority
/// position plus a seeded uniform sample of the majority class of equal size,
/// returned in a seeded shuffled order.
pub fn balanced_subset(labels: &[StanceLabel], seed: u64) -> Result<Vec<usize>> {
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    for label in StanceLabel::ALL {
        if by_class[label.index()].is_empty() {
            return Err(CorpusError::SingleClass { missing: label });
        }
    }
    let [anti, pro] = by_class;
    let (minority, majority) = if anti.len() <= pro.len() { (anti, pro) } else { (pro, anti) };

    let mut rng = rng::seeded(seed);
    let mut picked: Vec<usize> = majority.choose_multiple(&mut rng, minority.len()).copied().collect();
    picked.extend(minority);
    picked.shuffle(&mut rng);
    Ok(picked)
}

/// Downsamples the majority class so both stances are equally represented.
pub fn balance_sample(corpus: &Corpus, seed: u64) -> Result<Corpus> {
    let picked = balanced_subset(&corpus.labels(), seed)?;
    Ok(corpus.subset(&picked))
}
