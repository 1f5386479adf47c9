//! Label-derived similarity graph and degree-based pair scaling.
//!
//! Two items are similar when their label sets intersect. Degrees are taken
//! over the whole training set: `deg(i)` counts the pairs containing item
//! `i`, split into similar (`deg1`) and dissimilar (`deg0`) pairs. Self-pairs
//! are excluded unless requested.

use rayon::prelude::*;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};

/// True when two sorted label lists share an element.
pub fn labels_intersect(a: &[u32], b: &[u32]) -> bool {
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct SimilarityGraph {
    labels: Vec<Vec<u32>>,
    include_self_pairs: bool,
    deg: Vec<u32>,
    deg1: Vec<u32>,
    deg0: Vec<u32>,
}

/// One in-batch pair. `left`/`right` are positions inside the batch and
/// `i`/`j` the corresponding dataset indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampledPair {
    pub left: usize,
    pub right: usize,
    pub i: usize,
    pub j: usize,
    pub similar: bool,
}

pub fn build_graph(dataset: &LabeledDataset, include_self_pairs: bool) -> Result<SimilarityGraph> {
    SimilarityGraph::from_label_sets(dataset.label_sets(), include_self_pairs)
}

impl SimilarityGraph {
    /// Label lists are sorted and deduplicated here.
    pub fn from_label_sets(mut labels: Vec<Vec<u32>>, include_self_pairs: bool) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for l in &mut labels {
            l.sort_unstable();
            l.dedup();
        }
        let n = labels.len();
        let counts: Vec<(u32, u32)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut similar = 0u32;
                let mut dissimilar = 0u32;
                for j in 0..n {
                    if i == j && !include_self_pairs {
                        continue;
                    }
                    if labels_intersect(&labels[i], &labels[j]) {
                        similar += 1;
                    } else {
                        dissimilar += 1;
                    }
                }
                (similar, dissimilar)
            })
            .collect();
        let deg1: Vec<u32> = counts.iter().map(|c| c.0).collect();
        let deg0: Vec<u32> = counts.iter().map(|c| c.1).collect();
        let deg = counts.iter().map(|c| c.0 + c.1).collect();
        Ok(Self {
            labels,
            include_self_pairs,
            deg,
            deg1,
            deg0,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn includes_self_pairs(&self) -> bool {
        self.include_self_pairs
    }

    pub fn labels(&self, i: usize) -> &[u32] {
        &self.labels[i]
    }

    pub fn sim(&self, i: usize, j: usize) -> bool {
        labels_intersect(&self.labels[i], &self.labels[j])
    }

    pub fn deg(&self, i: usize) -> u32 {
        self.deg[i]
    }

    pub fn deg1(&self, i: usize) -> u32 {
        self.deg1[i]
    }

    pub fn deg0(&self, i: usize) -> u32 {
        self.deg0[i]
    }

    /// Pair scaling weight `|S_i||S_j| / sqrt(|S_i^s||S_j^s|)`, where `s` is
    /// the similarity class of the pair.
    pub fn alpha(&self, i: usize, j: usize) -> Result<f64> {
        let n = self.n();
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, len: n });
            }
        }
        let (di, dj) = if self.sim(i, j) {
            (self.deg1[i], self.deg1[j])
        } else {
            (self.deg0[i], self.deg0[j])
        };
        if di == 0 || dj == 0 {
            return Err(Error::DegenerateDegree { i, j });
        }
        let numerator = f64::from(self.deg[i]) * f64::from(self.deg[j]);
        Ok(numerator / (f64::from(di) * f64::from(dj)).sqrt())
    }

    /// Mean of `alpha` over every distinct non-degenerate pair `i < j`.
    /// Returns `None` when no pair has a defined weight.
    pub fn mean_alpha(&self) -> Option<f64> {
        let n = self.n();
        let (sum, count) = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut s = 0.0;
                let mut c = 0usize;
                for j in i + 1..n {
                    if let Ok(a) = self.alpha(i, j) {
                        s += a;
                        c += 1;
                    }
                }
                (s, c)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold((0.0, 0usize), |acc, x| (acc.0 + x.0, acc.1 + x.1));
        (count > 0).then(|| sum / count as f64)
    }

    /// All unordered pairs inside a batch, ordered by batch position.
    pub fn sample_pairs(&self, batch_indices: &[usize]) -> Result<Vec<SampledPair>> {
        let b = batch_indices.len();
        if b < 2 {
            return Err(Error::BatchTooSmall(b));
        }
        let n = self.n();
        let mut seen = vec![false; n];
        for &idx in batch_indices {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, len: n });
            }
            if std::mem::replace(&mut seen[idx], true) {
                return Err(Error::InvalidArgument(format!(
                    "index {idx} appears twice in batch"
                )));
            }
        }
        let mut pairs = Vec::with_capacity(b * (b - 1) / 2);
        for left in 0..b {
            for right in left + 1..b {
                let (i, j) = (batch_indices[left], batch_indices[right]);
                pairs.push(SampledPair {
                    left,
                    right,
                    i,
                    j,
                    similar: self.sim(i, j),
                });
            }
        }
        Ok(pairs)
    }
}
