//! Deployable model: bin edges plus float and symmetric-quantized integer
//! weights, its JSON form, and the integer-only scoring path used by the
//! learned eviction policy.
//!
//! ```json
//! {
//!   "feature_names": [...],
//!   "n_features": 9,
//!   "weight_scale": 10000,
//!   "features": [
//!     { "index": 0, "name": "page_delta1", "n_bins": 3,
//!       "bin_edges": [5, 9], "weights_float": [...], "weights_int": [...] }
//!   ]
//! }
//! ```

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretizer::{discretize_cascade, Discretizer, FeatureBins, MAX_BINS};
use crate::features::{FeatureVector, FEATURE_NAMES, N_FEATURES};
use crate::ranker::LinearRanker;

pub const DEFAULT_WEIGHT_SCALE: i64 = 10_000;

const MAX: usize = MAX_BINS as usize;

#[derive(Debug, Error)]
pub enum PackError {
    #[error("invalid model pack field `{field}`: {reason}")]
    Validation { field: String, reason: String },
    #[error("weight {weight} x scale {scale} does not fit in i64")]
    Overflow { weight: f64, scale: i64 },
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> PackError {
    PackError::Validation {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub index: u32,
    pub name: String,
    pub n_bins: u8,
    pub bin_edges: Vec<u64>,
    pub weights_float: Vec<f64>,
    pub weights_int: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PackFile {
    feature_names: Vec<String>,
    n_features: u32,
    weight_scale: i64,
    features: Vec<FeatureEntry>,
}

/// Fixed-size copies of the edges and integer weights, laid out like the
/// per-feature array maps a kernel program would read.
#[derive(Debug, Clone, PartialEq)]
struct IntTables {
    n_bins: [u8; N_FEATURES],
    edges: [[u64; MAX]; N_FEATURES],
    weights: [[i64; MAX]; N_FEATURES],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelPack {
    file: PackFile,
    tables: IntTables,
}

/// `trunc(weight × scale)` toward zero.
pub fn quantize_weight(weight: f64, scale: i64) -> Result<i64, PackError> {
    let v = (weight * scale as f64).trunc();
    // i64::MAX as f64 rounds up to 2^63, which is itself out of range
    if !v.is_finite() || v >= i64::MAX as f64 || v < i64::MIN as f64 {
        return Err(PackError::Overflow { weight, scale });
    }
    Ok(v as i64)
}

impl ModelPack {
    /// Symmetric quantization of a trained ranker.
    pub fn quantize(ranker: &LinearRanker, scale: i64) -> Result<Self, PackError> {
        if scale <= 0 {
            return Err(invalid("weight_scale", "must be positive"));
        }
        let disc = ranker.discretizer();
        let mut features = Vec::with_capacity(N_FEATURES);
        for (f, bins) in disc.features().iter().enumerate() {
            let weights_float = ranker.feature_weights(f).to_vec();
            let weights_int = weights_float
                .iter()
                .map(|&w| quantize_weight(w, scale))
                .collect::<Result<Vec<_>, _>>()?;
            features.push(FeatureEntry {
                index: f as u32,
                name: FEATURE_NAMES[f].to_string(),
                n_bins: bins.n_bins(),
                bin_edges: bins.edges().to_vec(),
                weights_float,
                weights_int,
            });
        }
        Self::from_file(PackFile {
            feature_names: FEATURE_NAMES.map(String::from).to_vec(),
            n_features: N_FEATURES as u32,
            weight_scale: scale,
            features,
        })
    }

    /// Every feature a single bin with weight zero.
    pub fn zeros() -> Self {
        let disc = Discretizer::new(vec![FeatureBins::single(); N_FEATURES]);
        Self::quantize(&LinearRanker::zeros(disc), DEFAULT_WEIGHT_SCALE)
            .expect("zero weights always quantize")
    }

    /// Builds a pack from explicit per-feature entries after validation.
    pub fn from_entries(weight_scale: i64, features: Vec<FeatureEntry>) -> Result<Self, PackError> {
        Self::from_file(PackFile {
            feature_names: features.iter().map(|f| f.name.clone()).collect(),
            n_features: features.len() as u32,
            weight_scale,
            features,
        })
    }

    fn from_file(file: PackFile) -> Result<Self, PackError> {
        let tables = validate(&file)?;
        Ok(Self { file, tables })
    }

    pub fn weight_scale(&self) -> i64 {
        self.file.weight_scale
    }

    pub fn features(&self) -> &[FeatureEntry] {
        &self.file.features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.file.feature_names
    }

    /// Float ranker with the same bins and float weights.
    pub fn to_ranker(&self) -> LinearRanker {
        let bins = self
            .file
            .features
            .iter()
            .map(|f| FeatureBins::new(f.bin_edges.clone()).expect("validated edges"))
            .collect();
        let weights = self
            .file
            .features
            .iter()
            .flat_map(|f| f.weights_float.iter().copied())
            .collect();
        LinearRanker::with_weights(Discretizer::new(bins), weights).expect("validated lengths")
    }

    /// Integer-only score: one bounded cascade lookup and one add per feature.
    #[inline]
    pub fn int_score(&self, raw: &FeatureVector) -> i64 {
        let t = &self.tables;
        let mut score: i64 = 0;
        for f in 0..N_FEATURES {
            let n_bins = t.n_bins[f];
            if n_bins > 0 && n_bins <= MAX_BINS {
                let mut bin = discretize_cascade(raw.0[f], &t.edges[f], n_bins);
                if bin >= MAX_BINS {
                    bin = MAX_BINS - 1;
                }
                score = score.wrapping_add(t.weights[f][bin as usize]);
            }
        }
        score
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.file).expect("pack serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, PackError> {
        let file: PackFile = serde_json::from_str(text)?;
        Self::from_file(file)
    }

    pub fn export_json(&self, path: impl AsRef<Path>) -> Result<(), PackError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self, PackError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

fn validate(file: &PackFile) -> Result<IntTables, PackError> {
    if file.n_features as usize != N_FEATURES {
        return Err(invalid(
            "n_features",
            format!("expected {N_FEATURES}, found {}", file.n_features),
        ));
    }
    if file.feature_names.len() != N_FEATURES {
        return Err(invalid(
            "feature_names",
            format!(
                "expected {N_FEATURES} names, found {}",
                file.feature_names.len()
            ),
        ));
    }
    if file.features.len() != N_FEATURES {
        return Err(invalid(
            "features",
            format!(
                "expected {N_FEATURES} entries, found {}",
                file.features.len()
            ),
        ));
    }
    if file.weight_scale <= 0 {
        return Err(invalid("weight_scale", "must be positive"));
    }

    let mut tables = IntTables {
        n_bins: [0; N_FEATURES],
        edges: [[0; MAX]; N_FEATURES],
        weights: [[0; MAX]; N_FEATURES],
    };
    for (i, entry) in file.features.iter().enumerate() {
        let field = |name: &str| format!("features[{i}].{name}");
        if entry.index as usize != i {
            return Err(invalid(
                field("index"),
                format!("expected {i}, found {}", entry.index),
            ));
        }
        if entry.name != file.feature_names[i] {
            return Err(invalid(
                field("name"),
                format!("`{}` does not match feature_names[{i}]", entry.name),
            ));
        }
        let n = entry.n_bins as usize;
        if n == 0 || n > MAX {
            return Err(invalid(
                field("n_bins"),
                format!("must be in 1..={MAX}, found {n}"),
            ));
        }
        if entry.bin_edges.len() != n - 1 {
            return Err(invalid(
                field("bin_edges"),
                format!(
                    "expected n_bins - 1 = {} edges, found {}",
                    n - 1,
                    entry.bin_edges.len()
                ),
            ));
        }
        if entry.bin_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(
                field("bin_edges"),
                "edges must be strictly increasing",
            ));
        }
        if entry.weights_float.len() != n {
            return Err(invalid(
                field("weights_float"),
                format!("expected {n} weights, found {}", entry.weights_float.len()),
            ));
        }
        if entry.weights_int.len() != n {
            return Err(invalid(
                field("weights_int"),
                format!("expected {n} weights, found {}", entry.weights_int.len()),
            ));
        }
        for (b, (&wf, &wi)) in entry
            .weights_float
            .iter()
            .zip(&entry.weights_int)
            .enumerate()
        {
            let expected = quantize_weight(wf, file.weight_scale)
                .map_err(|_| invalid(field("weights_float"), format!("bin {b} overflows")))?;
            if expected != wi {
                return Err(invalid(
                    format!("features[{i}].weights_int[{b}]"),
                    format!("{wi} != trunc({wf} x {}) = {expected}", file.weight_scale),
                ));
            }
        }
        tables.n_bins[i] = entry.n_bins;
        tables.edges[i][..n - 1].copy_from_slice(&entry.bin_edges);
        tables.weights[i][..n].copy_from_slice(&entry.weights_int);
    }
    Ok(tables)
}
