//! Trace-to-model training: FIFO replay for eviction events, dataset join,
//! quantile bins on training rows, pairwise training, held-out evaluation and
//! quantization.

use thiserror::Error;

use crate::discretizer::{BinError, Discretizer, MAX_BINS};
use crate::features::{build_dataset, DatasetError, DatasetRow};
use crate::modelpack::{ModelPack, PackError, DEFAULT_WEIGHT_SCALE};
use crate::ranker::{
    default_pair_budget, evaluate, sample_pairs, train, Metrics, RankerError, TrainConfig,
    TrainOutcome,
};
use crate::simcache::{run_simulation, Policy, SimError, SimOptions};
use crate::trace::{split_accesses_evictions, TraceEvent};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("need at least one {0} trace")]
    NoTraces(&'static str),
    #[error("{0} traces produced no eviction rows; lower the capacity")]
    NoRows(&'static str),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Bins(#[from] BinError),
    #[error(transparent)]
    Ranker(#[from] RankerError),
    #[error(transparent)]
    Pack(#[from] PackError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Cache size used for the FIFO replay that produces eviction events.
    pub capacity: u64,
    /// Training pairs; `None` uses [`default_pair_budget`].
    pub n_pairs: Option<u64>,
    pub max_bins: u8,
    pub weight_scale: i64,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            capacity: 512,
            n_pairs: None,
            max_bins: MAX_BINS,
            weight_scale: DEFAULT_WEIGHT_SCALE,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub pack: ModelPack,
    pub outcome: TrainOutcome,
    /// Held-out pairwise metrics of the float model.
    pub test_metrics: Metrics,
    pub n_train_rows: usize,
    pub n_test_rows: usize,
    pub n_train_pairs: usize,
    pub n_val_pairs: usize,
    pub n_test_pairs: usize,
}

impl TrainArtifacts {
    /// True when the held-out AUC falls below F1.
    pub fn auc_below_f1(&self) -> bool {
        self.test_metrics.auc < self.test_metrics.f1
    }
}

/// Replays `trace` under FIFO and joins its evictions with future reuse.
pub fn eviction_dataset(
    trace: &[TraceEvent],
    capacity: u64,
) -> Result<Vec<DatasetRow>, PipelineError> {
    let opts = SimOptions {
        record_events: true,
        ..SimOptions::default()
    };
    let run = run_simulation(trace, &Policy::Fifo, capacity, opts)?;
    let (accesses, evictions) = split_accesses_evictions(&run.events);
    Ok(build_dataset(&accesses, &evictions)?)
}

fn rows_of(
    traces: &[Vec<TraceEvent>],
    capacity: u64,
) -> Result<Vec<Vec<DatasetRow>>, PipelineError> {
    traces
        .iter()
        .map(|t| eviction_dataset(t, capacity))
        .collect()
}

/// Samples pairs within each trace, splitting the budget evenly.
fn pairs_of(
    per_trace: &[Vec<DatasetRow>],
    disc: &Discretizer,
    total: u64,
    seed: u64,
) -> Result<Vec<crate::ranker::RankPair>, RankerError> {
    let usable: Vec<&Vec<DatasetRow>> = per_trace.iter().filter(|r| r.len() >= 2).collect();
    if usable.is_empty() {
        return Err(RankerError::NoValidPair);
    }
    let k = usable.len() as u64;
    let mut out = Vec::with_capacity(total as usize);
    let mut any = false;
    for (i, rows) in usable.into_iter().enumerate() {
        let share = total / k + u64::from((i as u64) < total % k);
        match sample_pairs(rows, disc, share, seed.wrapping_add(i as u64)) {
            Ok(p) => {
                any = true;
                out.extend(p);
            }
            Err(RankerError::NoValidPair) => {}
            Err(e) => return Err(e),
        }
    }
    if !any {
        return Err(RankerError::NoValidPair);
    }
    Ok(out)
}

/// Full training run. Validation pairs for early stopping come from the
/// training traces; the test traces are only scored at the end.
pub fn train_from_traces(
    train_traces: &[Vec<TraceEvent>],
    test_traces: &[Vec<TraceEvent>],
    cfg: &PipelineConfig,
) -> Result<TrainArtifacts, PipelineError> {
    if train_traces.is_empty() {
        return Err(PipelineError::NoTraces("training"));
    }
    if test_traces.is_empty() {
        return Err(PipelineError::NoTraces("test"));
    }
    let train_rows = rows_of(train_traces, cfg.capacity)?;
    let test_rows = rows_of(test_traces, cfg.capacity)?;
    let n_train_rows: usize = train_rows.iter().map(Vec::len).sum();
    let n_test_rows: usize = test_rows.iter().map(Vec::len).sum();
    if n_train_rows == 0 {
        return Err(PipelineError::NoRows("training"));
    }
    if n_test_rows == 0 {
        return Err(PipelineError::NoRows("test"));
    }

    let disc = Discretizer::fit(
        train_rows.iter().flatten().map(|r| &r.features),
        cfg.max_bins,
    )?;
    let n_pairs = cfg
        .n_pairs
        .unwrap_or_else(|| default_pair_budget(n_train_rows))
        .max(1);
    let n_aux = (n_pairs / 4).max(1);
    let seed = cfg.train.seed;
    let train_pairs = pairs_of(&train_rows, &disc, n_pairs, seed)?;
    let val_pairs = pairs_of(&train_rows, &disc, n_aux, seed ^ 0x5eed_0001)?;
    let test_pairs = pairs_of(&test_rows, &disc, n_aux, seed ^ 0x5eed_0002)?;

    let outcome = train(&train_pairs, &val_pairs, disc, &cfg.train)?;
    let test_metrics = match evaluate(&outcome.ranker, &test_pairs) {
        Ok(m) => m,
        Err(RankerError::SingleClass { f1 }) => Metrics { auc: f64::NAN, f1 },
        Err(e) => return Err(e.into()),
    };
    let pack = ModelPack::quantize(&outcome.ranker, cfg.weight_scale)?;
    Ok(TrainArtifacts {
        pack,
        n_train_rows,
        n_test_rows,
        n_train_pairs: train_pairs.len(),
        n_val_pairs: val_pairs.len(),
        n_test_pairs: test_pairs.len(),
        outcome,
        test_metrics,
    })
}
