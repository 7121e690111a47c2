//! Page-cache eviction simulation with a learned pairwise ranker.
//!
//! Traces feed a per-page feature tracker; a Bradley–Terry ranker over
//! quantile-binned features is trained offline, quantized into an integer
//! model pack, and replayed against FIFO in a deterministic cache simulator.

pub mod discretizer;
pub mod evalstats;
pub mod features;
pub mod modelpack;
pub mod pipeline;
pub mod ranker;
pub mod simcache;
pub mod trace;

pub use discretizer::{Discretizer, FeatureBins, MAX_BINS};
pub use features::{build_dataset, DatasetRow, FeatureVector, Tracker, MISSING, N_FEATURES};
pub use modelpack::ModelPack;
pub use ranker::{LinearRanker, TrainConfig};
pub use simcache::{run_simulation, Policy, SimOptions, SimReport};
pub use trace::{generate_workload, PageKey, TraceEvent, WorkloadKind, WorkloadSpec};
