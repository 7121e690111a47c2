//! Page-level event model, synthetic workload generation and trace files.
//!
//! A trace is a time-sorted list of [`TraceEvent`]s. Generators only emit
//! [`EventKind::Access`]; the simulator adds `Insert` and `Evict` records when
//! asked to log its decisions.

mod format;
mod workload;

pub use format::{
    export_csv, read_csv, read_trace, read_trace_bytes, write_trace, write_trace_bytes, TraceError,
    HEADER_LEN, MAGIC, RECORD_LEN, VERSION,
};
pub use workload::{
    generate_workload, Popularity, SizeDistribution, WorkloadError, WorkloadKind, WorkloadSpec,
};

use serde::{Deserialize, Serialize};
use std::fmt;

/// Identity of a cached page: device, inode and page index within the file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PageKey {
    pub dev: u64,
    pub inode: u64,
    pub offset: u64,
}

impl PageKey {
    pub const fn new(dev: u64, inode: u64, offset: u64) -> Self {
        Self { dev, inode, offset }
    }

    /// The (device, inode) pair the page belongs to.
    pub const fn file(&self) -> FileKey {
        FileKey {
            dev: self.dev,
            inode: self.inode,
        }
    }
}

impl fmt::Display for PageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.dev, self.inode, self.offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FileKey {
    pub dev: u64,
    pub inode: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Access,
    Insert,
    Evict,
}

impl EventKind {
    pub(crate) fn to_byte(self) -> u8 {
        match self {
            EventKind::Access => 0,
            EventKind::Insert => 1,
            EventKind::Evict => 2,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(EventKind::Access),
            1 => Some(EventKind::Insert),
            2 => Some(EventKind::Evict),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceEvent {
    pub kind: EventKind,
    pub t_ns: u64,
    pub key: PageKey,
}

impl TraceEvent {
    pub const fn access(t_ns: u64, key: PageKey) -> Self {
        Self {
            kind: EventKind::Access,
            t_ns,
            key,
        }
    }

    pub const fn insert(t_ns: u64, key: PageKey) -> Self {
        Self {
            kind: EventKind::Insert,
            t_ns,
            key,
        }
    }

    pub const fn evict(t_ns: u64, key: PageKey) -> Self {
        Self {
            kind: EventKind::Evict,
            t_ns,
            key,
        }
    }
}

/// Index of the first event whose timestamp goes backwards, if any.
pub fn first_unsorted(events: &[TraceEvent]) -> Option<usize> {
    events
        .windows(2)
        .position(|w| w[1].t_ns < w[0].t_ns)
        .map(|i| i + 1)
}

/// Splits a mixed trace into its access stream and its eviction stream.
pub fn split_accesses_evictions(events: &[TraceEvent]) -> (Vec<TraceEvent>, Vec<TraceEvent>) {
    let accesses = events
        .iter()
        .filter(|e| e.kind == EventKind::Access)
        .copied()
        .collect();
    let evictions = events
        .iter()
        .filter(|e| e.kind == EventKind::Evict)
        .copied()
        .collect();
    (accesses, evictions)
}
