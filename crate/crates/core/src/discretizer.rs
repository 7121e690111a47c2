//! Quantile bin edges per feature with `[start, end)` lookup semantics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, N_FEATURES};

pub const MAX_BINS: u8 = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BinError {
    #[error("cannot fit bins on an empty sample")]
    Empty,
    #[error("max_bins must be in 1..={MAX_BINS}, got {0}")]
    MaxBins(u8),
    #[error("bin edges must be strictly increasing")]
    Unsorted,
    #[error("{n_edges} edges exceed the {MAX_BINS}-bin limit")]
    TooMany { n_edges: usize },
}

/// Interior edges of one feature; `n_bins = edges.len() + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureBins {
    edges: Vec<u64>,
}

impl FeatureBins {
    pub fn new(edges: Vec<u64>) -> Result<Self, BinError> {
        if edges.len() >= MAX_BINS as usize {
            return Err(BinError::TooMany {
                n_edges: edges.len(),
            });
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BinError::Unsorted);
        }
        Ok(Self { edges })
    }

    /// Single bin, no edges.
    pub fn single() -> Self {
        Self { edges: Vec::new() }
    }

    pub fn n_bins(&self) -> u8 {
        self.edges.len() as u8 + 1
    }

    pub fn edges(&self) -> &[u64] {
        &self.edges
    }

    /// Smallest `i` with `value < edges[i]`, else the top bin.
    pub fn discretize(&self, value: u64) -> u8 {
        self.edges.partition_point(|&e| e <= value) as u8
    }

    /// Same lookup as a bounded comparison cascade over fixed-size storage.
    pub fn discretize_cascade(&self, value: u64) -> u8 {
        let mut padded = [0u64; MAX_BINS as usize];
        padded[..self.edges.len()].copy_from_slice(&self.edges);
        discretize_cascade(value, &padded, self.n_bins())
    }
}

/// Unrolled comparison chain; at most `MAX_BINS - 1` comparisons.
#[inline]
pub fn discretize_cascade(value: u64, edges: &[u64; MAX_BINS as usize], n_bins: u8) -> u8 {
    let interior = n_bins.saturating_sub(1);
    if interior > 0 && value < edges[0] {
        return 0;
    }
    if interior > 1 && value < edges[1] {
        return 1;
    }
    if interior > 2 && value < edges[2] {
        return 2;
    }
    if interior > 3 && value < edges[3] {
        return 3;
    }
    if interior > 4 && value < edges[4] {
        return 4;
    }
    if interior > 5 && value < edges[5] {
        return 5;
    }
    if interior > 6 && value < edges[6] {
        return 6;
    }
    if interior > 7 && value < edges[7] {
        return 7;
    }
    if interior > 8 && value < edges[8] {
        return 8;
    }
    n_bins.saturating_sub(1)
}

/// Lower nearest-rank quantile edges at `k / max_bins`, deduplicated.
///
/// Candidate edges that do not exceed the sample minimum are dropped: they
/// would only bound an empty bottom bin.
pub fn fit_quantile_bins(values: &[u64], max_bins: u8) -> Result<FeatureBins, BinError> {
    if values.is_empty() {
        return Err(BinError::Empty);
    }
    if max_bins == 0 || max_bins > MAX_BINS {
        return Err(BinError::MaxBins(max_bins));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let min = sorted[0];
    let mut edges: Vec<u64> = (1..max_bins as usize)
        .map(|k| sorted[k * n / max_bins as usize])
        .filter(|&e| e > min)
        .collect();
    edges.dedup();
    Ok(FeatureBins { edges })
}

/// Bins for all nine features plus the flattened one-hot layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discretizer {
    bins: Vec<FeatureBins>,
}

impl Discretizer {
    pub fn new(bins: Vec<FeatureBins>) -> Self {
        assert_eq!(bins.len(), N_FEATURES, "one FeatureBins per feature");
        Self { bins }
    }

    pub fn fit<'a>(
        samples: impl IntoIterator<Item = &'a FeatureVector>,
        max_bins: u8,
    ) -> Result<Self, BinError> {
        let mut columns: Vec<Vec<u64>> = vec![Vec::new(); N_FEATURES];
        for fv in samples {
            for (col, &v) in columns.iter_mut().zip(fv.0.iter()) {
                col.push(v);
            }
        }
        let bins = columns
            .iter()
            .map(|c| fit_quantile_bins(c, max_bins))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { bins })
    }

    pub fn features(&self) -> &[FeatureBins] {
        &self.bins
    }

    /// Start of each feature's block in the flattened weight vector.
    pub fn offsets(&self) -> [u32; N_FEATURES] {
        let mut out = [0u32; N_FEATURES];
        let mut acc = 0u32;
        for (o, b) in out.iter_mut().zip(&self.bins) {
            *o = acc;
            acc += b.n_bins() as u32;
        }
        out
    }

    /// Total one-hot dimension.
    pub fn dim(&self) -> usize {
        self.bins.iter().map(|b| b.n_bins() as usize).sum()
    }
}
