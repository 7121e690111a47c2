//! Capacity-bounded page-cache simulator.
//!
//! The resident set is a strict FIFO: misses push to the head, hits never
//! reorder. When occupancy exceeds capacity an eviction request goes to the
//! active policy. The learned policy scores the `oversample × n` oldest pages
//! with the integer model and evicts the `n` lowest scores; survivors keep
//! their queue positions.

use std::collections::{HashSet, VecDeque};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Tracker, TrackerHandle};
use crate::modelpack::ModelPack;
use crate::trace::{EventKind, PageKey, TraceEvent};

/// Largest eviction request the policy hook accepts.
pub const MAX_EVICTION_BATCH: u8 = 32;
pub const DEFAULT_OVERSAMPLE: u8 = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("cache capacity must be >= 1")]
    ZeroCapacity,
    #[error("oversample factor must be >= 1")]
    ZeroOversample,
    #[error("trace is not time-sorted at event {0}")]
    Unsorted(usize),
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Policy {
    Fifo,
    Learned { pack: ModelPack, oversample: u8 },
}

impl Policy {
    pub fn learned(pack: ModelPack) -> Self {
        Policy::Learned {
            pack,
            oversample: DEFAULT_OVERSAMPLE,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Fifo => "fifo",
            Policy::Learned { .. } => "learned",
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        match self {
            Policy::Learned { oversample: 0, .. } => Err(SimError::ZeroOversample),
            _ => Ok(()),
        }
    }
}

/// How many pages an over-capacity cache asks the policy to evict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reclaim {
    /// `min(32, overflow)` pages: a strict high watermark at capacity.
    #[default]
    Overflow,
    /// Always a full 32-page request once capacity is exceeded.
    FullBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub accesses: u64,
    pub insertions: u64,
    pub evictions: u64,
    pub hits: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessOutcome {
    Hit,
    MissInserted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimOptions {
    /// Time every eviction decision with a wall clock.
    pub record_latency: bool,
    /// Log Access, Insert and Evict events.
    pub record_events: bool,
    pub reclaim: Reclaim,
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    key: PageKey,
    handle: TrackerHandle,
}

#[derive(Debug)]
pub struct Cache {
    capacity: u64,
    /// Front is the tail (oldest), back is the head (newest).
    fifo: VecDeque<Slot>,
    resident: HashSet<PageKey>,
    tracker: Tracker,
    counters: Counters,
    options: SimOptions,
    latency_ns: Vec<u64>,
    candidates: Vec<u32>,
    events: Vec<TraceEvent>,
    scratch_scores: Vec<(i64, usize)>,
    scratch_window: Vec<Slot>,
    scratch_mask: Vec<bool>,
}

impl Cache {
    pub fn new(capacity: u64) -> Result<Self, SimError> {
        Self::with_options(capacity, SimOptions::default())
    }

    pub fn with_options(capacity: u64, options: SimOptions) -> Result<Self, SimError> {
        if capacity == 0 {
            return Err(SimError::ZeroCapacity);
        }
        Ok(Self {
            capacity,
            fifo: VecDeque::new(),
            resident: HashSet::new(),
            tracker: Tracker::new(),
            counters: Counters::default(),
            options,
            latency_ns: Vec::new(),
            candidates: Vec::new(),
            events: Vec::new(),
            scratch_scores: Vec::new(),
            scratch_window: Vec::new(),
            scratch_mask: Vec::new(),
        })
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.fifo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty()
    }

    pub fn contains(&self, key: &PageKey) -> bool {
        self.resident.contains(key)
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    /// Resident keys from head (newest) to tail (oldest).
    pub fn fifo_order(&self) -> Vec<PageKey> {
        self.fifo.iter().rev().map(|s| s.key).collect()
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn access(&mut self, key: PageKey, t_ns: u64, policy: &Policy) -> AccessOutcome {
        self.counters.accesses += 1;
        let handle = self.tracker.on_access(key, t_ns);
        if self.options.record_events {
            self.events.push(TraceEvent::access(t_ns, key));
        }
        if self.resident.contains(&key) {
            self.counters.hits += 1;
            return AccessOutcome::Hit;
        }

        self.fifo.push_back(Slot { key, handle });
        self.resident.insert(key);
        self.counters.insertions += 1;
        if self.options.record_events {
            self.events.push(TraceEvent::insert(t_ns, key));
        }

        let len = self.fifo.len() as u64;
        if len > self.capacity {
            let n = match self.options.reclaim {
                Reclaim::Overflow => (len - self.capacity).min(MAX_EVICTION_BATCH as u64) as u8,
                Reclaim::FullBatch => MAX_EVICTION_BATCH,
            };
            let start = self.options.record_latency.then(Instant::now);
            let evicted = match policy {
                Policy::Fifo => self.evict_fifo(n),
                Policy::Learned { pack, oversample } => {
                    self.evict_learned(n, pack, *oversample, t_ns)
                }
            };
            if let Some(start) = start {
                self.latency_ns.push(start.elapsed().as_nanos() as u64);
            }
            if self.options.record_events {
                self.events
                    .extend(evicted.iter().map(|&k| TraceEvent::evict(t_ns, k)));
            }
        }
        AccessOutcome::MissInserted
    }

    fn remove_resident(&mut self, key: &PageKey) {
        self.resident.remove(key);
        self.counters.evictions += 1;
    }

    /// Evicts up to `n` (capped at 32) tail keys, oldest first.
    pub fn evict_fifo(&mut self, n: u8) -> Vec<PageKey> {
        let n = n.min(MAX_EVICTION_BATCH) as usize;
        let take = n.min(self.fifo.len());
        self.candidates.push(take as u32);
        let mut out = Vec::with_capacity(take);
        for _ in 0..take {
            let slot = self.fifo.pop_front().expect("length checked");
            self.remove_resident(&slot.key);
            out.push(slot.key);
        }
        out
    }

    /// Scores the `oversample × n` oldest keys and evicts the `n` lowest,
    /// ties going to the older key. Returned in eviction-priority order.
    pub fn evict_learned(
        &mut self,
        n: u8,
        pack: &ModelPack,
        oversample: u8,
        t_now_ns: u64,
    ) -> Vec<PageKey> {
        let n = n.min(MAX_EVICTION_BATCH) as usize;
        let window = (n * oversample.max(1) as usize).min(self.fifo.len());
        let n = n.min(window);
        self.candidates.push(window as u32);

        self.scratch_window.clear();
        self.scratch_window.extend(self.fifo.drain(..window));
        self.scratch_scores.clear();
        for (pos, slot) in self.scratch_window.iter().enumerate() {
            let features = self
                .tracker
                .extract_by_handle(slot.handle, &slot.key, t_now_ns);
            self.scratch_scores.push((pack.int_score(&features), pos));
        }
        // (score, age rank) is a total order, so the unstable selection is deterministic
        if n < window {
            self.scratch_scores.select_nth_unstable(n);
        }
        let victims = &mut self.scratch_scores[..n];
        victims.sort_unstable();

        self.scratch_mask.clear();
        self.scratch_mask.resize(window, false);
        let mut out = Vec::with_capacity(n);
        for &(_, pos) in victims.iter() {
            self.scratch_mask[pos] = true;
            out.push(self.scratch_window[pos].key);
        }
        for key in &out {
            self.remove_resident(key);
        }
        for (pos, slot) in self.scratch_window.iter().enumerate().rev() {
            if !self.scratch_mask[pos] {
                self.fifo.push_front(*slot);
            }
        }
        out
    }

    pub fn report(&self, policy: &Policy) -> SimReport {
        SimReport::new(
            policy.name(),
            self.capacity,
            self.counters,
            self.options.record_latency.then(|| self.latency_ns.clone()),
            &self.candidates,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub p50: Option<u64>,
    pub p90: Option<u64>,
    pub p99: Option<u64>,
    pub mean: Option<f64>,
    pub samples_path: Option<String>,
}

impl LatencySummary {
    pub fn empty() -> Self {
        Self {
            p50: None,
            p90: None,
            p99: None,
            mean: None,
            samples_path: None,
        }
    }

    pub fn from_samples(samples: &[u64]) -> Self {
        if samples.is_empty() {
            return Self::empty();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let pct = |q: f64| {
            // nearest rank
            let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
            sorted[rank - 1]
        };
        let mean = sorted.iter().map(|&v| v as f64).sum::<f64>() / sorted.len() as f64;
        Self {
            p50: Some(pct(0.50)),
            p90: Some(pct(0.90)),
            p99: Some(pct(0.99)),
            mean: Some(mean),
            samples_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: String,
    pub capacity: u64,
    pub accesses: u64,
    pub insertions: u64,
    pub evictions: u64,
    pub hits: u64,
    /// `insertions / accesses`; null when there were no accesses.
    pub insertion_rate: Option<f64>,
    pub latency_ns: LatencySummary,
    pub eviction_decisions: u64,
    pub mean_candidates: Option<f64>,
    #[serde(skip)]
    pub latency_samples_ns: Vec<u64>,
    #[serde(skip)]
    pub candidate_counts: Vec<u32>,
}

impl SimReport {
    fn new(
        policy: &str,
        capacity: u64,
        counters: Counters,
        latency: Option<Vec<u64>>,
        candidates: &[u32],
    ) -> Self {
        let insertion_rate =
            (counters.accesses > 0).then(|| counters.insertions as f64 / counters.accesses as f64);
        let latency_samples_ns = latency.unwrap_or_default();
        let mean_candidates = (!candidates.is_empty())
            .then(|| candidates.iter().map(|&c| c as f64).sum::<f64>() / candidates.len() as f64);
        Self {
            policy: policy.to_string(),
            capacity,
            accesses: counters.accesses,
            insertions: counters.insertions,
            evictions: counters.evictions,
            hits: counters.hits,
            insertion_rate,
            latency_ns: LatencySummary::from_samples(&latency_samples_ns),
            eviction_decisions: candidates.len() as u64,
            mean_candidates,
            latency_samples_ns,
            candidate_counts: candidates.to_vec(),
        }
    }

    pub fn counters(&self) -> Counters {
        Counters {
            accesses: self.accesses,
            insertions: self.insertions,
            evictions: self.evictions,
            hits: self.hits,
        }
    }
}

/// Result of one replay.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub report: SimReport,
    /// Access, Insert and Evict events when requested.
    pub events: Vec<TraceEvent>,
    pub final_fifo: Vec<PageKey>,
}

/// Replays every Access event of `trace` through a fresh cache.
pub fn run_simulation(
    trace: &[TraceEvent],
    policy: &Policy,
    capacity: u64,
    options: SimOptions,
) -> Result<SimRun, SimError> {
    policy.validate()?;
    if let Some(i) = crate::trace::first_unsorted(trace) {
        return Err(SimError::Unsorted(i));
    }
    let mut cache = Cache::with_options(capacity, options)?;
    for ev in trace.iter().filter(|e| e.kind == EventKind::Access) {
        cache.access(ev.key, ev.t_ns, policy);
    }
    Ok(SimRun {
        report: cache.report(policy),
        final_fifo: cache.fifo_order(),
        events: std::mem::take(&mut cache.events),
    })
}

pub fn write_latency_csv<W: std::io::Write>(samples: &[u64], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["decision", "latency_ns"])?;
    for (i, s) in samples.iter().enumerate() {
        w.write_record([i.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
