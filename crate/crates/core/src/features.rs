//! Per-page and per-inode access state, the nine-feature vector, and
//! labeled dataset construction from access and eviction streams.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{FileKey, PageKey, TraceEvent};

/// Sentinel for a value computed from an unpopulated history slot.
pub const MISSING: u64 = u64::MAX;
pub const HALF_LIFE_NS: u64 = 1_000_000_000;
/// Fixed-point value of one access in an EMA score.
pub const EMA_UNIT: u64 = 1024;
pub const N_FEATURES: usize = 9;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "page_delta1",
    "page_delta2",
    "inode_delta1",
    "inode_delta2",
    "offset_distance",
    "file_size",
    "page_ema",
    "inode_ema",
    "access_to_eviction",
];

/// Halves `score` once per whole elapsed half-life.
pub fn decay(score: u64, elapsed_ns: u64) -> u64 {
    let halvings = elapsed_ns / HALF_LIFE_NS;
    if halvings >= 64 {
        0
    } else {
        score >> halvings
    }
}

/// Three most recent access timestamps plus a lazily decayed hotness score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AccessHistory {
    pub last_access_ns: u64,
    pub second_last_access_ns: u64,
    pub third_last_access_ns: u64,
    /// Number of populated timestamp slots, 0..=3.
    pub access_count_valid: u8,
    pub ema_score: u64,
    pub ema_updated_ns: u64,
}

impl AccessHistory {
    fn record(&mut self, t_ns: u64) {
        self.third_last_access_ns = self.second_last_access_ns;
        self.second_last_access_ns = self.last_access_ns;
        self.last_access_ns = t_ns;
        self.access_count_valid = (self.access_count_valid + 1).min(3);

        let elapsed = t_ns.saturating_sub(self.ema_updated_ns);
        self.ema_score = decay(self.ema_score, elapsed).saturating_add(EMA_UNIT);
        self.ema_updated_ns = t_ns;
    }

    pub fn delta1(&self) -> u64 {
        if self.access_count_valid >= 2 {
            self.last_access_ns - self.second_last_access_ns
        } else {
            MISSING
        }
    }

    pub fn delta2(&self) -> u64 {
        if self.access_count_valid >= 3 {
            self.second_last_access_ns - self.third_last_access_ns
        } else {
            MISSING
        }
    }

    /// EMA score as seen at `t_ns`.
    pub fn ema_at(&self, t_ns: u64) -> u64 {
        decay(self.ema_score, t_ns.saturating_sub(self.ema_updated_ns))
    }
}

pub type PageState = AccessHistory;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InodeState {
    pub history: AccessHistory,
    pub last_access_offset: u64,
    pub file_size_pages: u64,
}

/// Raw, non-discretized features at one decision point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureVector(pub [u64; N_FEATURES]);

impl FeatureVector {
    pub fn page_delta1(&self) -> u64 {
        self.0[0]
    }
    pub fn page_delta2(&self) -> u64 {
        self.0[1]
    }
    pub fn inode_delta1(&self) -> u64 {
        self.0[2]
    }
    pub fn inode_delta2(&self) -> u64 {
        self.0[3]
    }
    pub fn offset_distance(&self) -> u64 {
        self.0[4]
    }
    pub fn file_size(&self) -> u64 {
        self.0[5]
    }
    pub fn page_ema(&self) -> u64 {
        self.0[6]
    }
    pub fn inode_ema(&self) -> u64 {
        self.0[7]
    }
    pub fn access_to_eviction(&self) -> u64 {
        self.0[8]
    }

    /// Builds the vector from whatever state exists for the page and its file.
    pub fn from_state(
        key: &PageKey,
        page: Option<&PageState>,
        inode: Option<&InodeState>,
        t_now_ns: u64,
    ) -> Self {
        let mut f = [MISSING; N_FEATURES];
        match page {
            Some(p) if p.access_count_valid > 0 => {
                f[0] = p.delta1();
                f[1] = p.delta2();
                f[6] = p.ema_at(t_now_ns);
                f[8] = t_now_ns.saturating_sub(p.last_access_ns);
            }
            _ => f[6] = 0,
        }
        match inode {
            Some(i) if i.history.access_count_valid > 0 => {
                f[2] = i.history.delta1();
                f[3] = i.history.delta2();
                f[4] = key.offset.abs_diff(i.last_access_offset);
                f[5] = i.file_size_pages;
                f[7] = i.history.ema_at(t_now_ns);
            }
            _ => {
                f[4] = 0;
                f[5] = 0;
                f[7] = 0;
            }
        }
        FeatureVector(f)
    }
}

/// Slab slots of a page and its inode inside a [`Tracker`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackerHandle {
    page: u32,
    inode: u32,
}

/// Access-state tracker for pages and their inodes. Capacity is unbounded.
///
/// State lives in slabs so callers holding a [`TrackerHandle`] can read it
/// without hashing.
#[derive(Debug, Default, Clone)]
pub struct Tracker {
    page_slots: HashMap<PageKey, u32>,
    pages: Vec<PageState>,
    inode_slots: HashMap<FileKey, u32>,
    inodes: Vec<InodeState>,
}

impl Tracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on_access(&mut self, key: PageKey, t_ns: u64) -> TrackerHandle {
        let next = self.pages.len() as u32;
        let page = *self.page_slots.entry(key).or_insert(next);
        if page == next {
            self.pages.push(PageState::default());
        }
        let next = self.inodes.len() as u32;
        let inode = *self.inode_slots.entry(key.file()).or_insert(next);
        if inode == next {
            self.inodes.push(InodeState::default());
        }

        self.pages[page as usize].record(t_ns);
        let i = &mut self.inodes[inode as usize];
        i.history.record(t_ns);
        i.last_access_offset = key.offset;
        i.file_size_pages = i.file_size_pages.max(key.offset.saturating_add(1));
        TrackerHandle { page, inode }
    }

    pub fn page(&self, key: &PageKey) -> Option<&PageState> {
        self.page_slots.get(key).map(|&i| &self.pages[i as usize])
    }

    pub fn inode(&self, key: &PageKey) -> Option<&InodeState> {
        self.inode_slots
            .get(&key.file())
            .map(|&i| &self.inodes[i as usize])
    }

    pub fn extract_features(&self, key: &PageKey, t_now_ns: u64) -> FeatureVector {
        FeatureVector::from_state(key, self.page(key), self.inode(key), t_now_ns)
    }

    /// Same as [`Tracker::extract_features`] for a handle from this tracker.
    #[inline]
    pub fn extract_by_handle(
        &self,
        handle: TrackerHandle,
        key: &PageKey,
        t_now_ns: u64,
    ) -> FeatureVector {
        FeatureVector::from_state(
            key,
            Some(&self.pages[handle.page as usize]),
            Some(&self.inodes[handle.inode as usize]),
            t_now_ns,
        )
    }

    pub fn tracked_pages(&self) -> usize {
        self.pages.len()
    }
}

/// One eviction decision joined with the page's next reuse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub features: FeatureVector,
    pub eviction_t_ns: u64,
    /// Time from eviction to the next access of the page, or [`MISSING`].
    pub reuse_time_ns: u64,
    pub key: PageKey,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{stream} stream is not time-sorted at index {index}")]
    Unsorted { stream: &'static str, index: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed dataset csv: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Joins each eviction with the page's latest access at or before it and
/// with its first access after it. Evictions of never-accessed pages are
/// dropped.
pub fn build_dataset(
    accesses: &[TraceEvent],
    evictions: &[TraceEvent],
) -> Result<Vec<DatasetRow>, DatasetError> {
    if let Some(index) = crate::trace::first_unsorted(accesses) {
        return Err(DatasetError::Unsorted {
            stream: "access",
            index,
        });
    }
    if let Some(index) = crate::trace::first_unsorted(evictions) {
        return Err(DatasetError::Unsorted {
            stream: "eviction",
            index,
        });
    }

    let mut future: HashMap<PageKey, Vec<u64>> = HashMap::new();
    for a in accesses {
        future.entry(a.key).or_default().push(a.t_ns);
    }

    let mut tracker = Tracker::new();
    // state as of each page's most recent access
    let mut snapshots: HashMap<PageKey, (PageState, InodeState)> = HashMap::new();
    let mut rows = Vec::new();
    let mut next_access = 0;
    for ev in evictions {
        while next_access < accesses.len() && accesses[next_access].t_ns <= ev.t_ns {
            let a = &accesses[next_access];
            tracker.on_access(a.key, a.t_ns);
            let page = *tracker.page(&a.key).expect("just recorded");
            let inode = *tracker.inode(&a.key).expect("just recorded");
            snapshots.insert(a.key, (page, inode));
            next_access += 1;
        }
        let Some((page, inode)) = snapshots.get(&ev.key) else {
            continue;
        };
        let features = FeatureVector::from_state(&ev.key, Some(page), Some(inode), ev.t_ns);
        let times = &future[&ev.key];
        let after = times.partition_point(|&t| t <= ev.t_ns);
        let reuse_time_ns = times.get(after).map_or(MISSING, |&t| t - ev.t_ns);
        rows.push(DatasetRow {
            features,
            eviction_t_ns: ev.t_ns,
            reuse_time_ns,
            key: ev.key,
        });
    }
    Ok(rows)
}

fn dataset_header() -> Vec<&'static str> {
    let mut h: Vec<&str> = FEATURE_NAMES.to_vec();
    h.extend(["eviction_t_ns", "reuse_time_ns", "dev", "inode", "offset"]);
    h
}

pub fn export_dataset_csv(rows: &[DatasetRow], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let file = fs::File::create(path)?;
    write_dataset_csv(rows, BufWriter::new(file))
}

pub fn write_dataset_csv<W: Write>(rows: &[DatasetRow], out: W) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(dataset_header())?;
    for r in rows {
        let mut rec: Vec<String> = r.features.0.iter().map(u64::to_string).collect();
        rec.extend(
            [
                r.eviction_t_ns,
                r.reuse_time_ns,
                r.key.dev,
                r.key.inode,
                r.key.offset,
            ]
            .map(|v| v.to_string()),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv(path: impl AsRef<Path>) -> Result<Vec<DatasetRow>, DatasetError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != dataset_header() {
        return Err(DatasetError::Malformed(format!(
            "unexpected header {header:?}"
        )));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| {
                s.parse::<u64>()
                    .map_err(|e| DatasetError::Malformed(format!("`{s}`: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if vals.len() != N_FEATURES + 5 {
            return Err(DatasetError::Malformed(format!(
                "row has {} fields",
                vals.len()
            )));
        }
        let mut f = [0u64; N_FEATURES];
        f.copy_from_slice(&vals[..N_FEATURES]);
        let v = &vals[N_FEATURES..];
        rows.push(DatasetRow {
            features: FeatureVector(f),
            eviction_t_ns: v[0],
            reuse_time_ns: v[1],
            key: PageKey::new(v[2], v[3], v[4]),
        });
    }
    Ok(rows)
}
