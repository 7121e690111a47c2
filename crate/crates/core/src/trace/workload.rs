//! Seeded synthetic workloads.
//!
//! Each kind is a page-level approximation of a filesystem benchmark
//! personality; none of them touch a real filesystem. `n_ops` counts emitted
//! page accesses, so a generated trace always has exactly `n_ops` events.
//!
//! | kind                 | model                                                             |
//! |----------------------|-------------------------------------------------------------------|
//! | `webserver`          | whole-file reads of popular small files, plus a log append        |
//! | `webproxy`           | whole-file reads; some files are replaced (new inode) and refetched|
//! | `varmail`            | create / append / read / delete cycles on small mail files        |
//! | `copyfiles`          | repeated passes reading each source file and writing a copy       |
//! | `openfiles`          | first-page touches of many files                                  |
//! | `mongo`              | skewed chunk reads inside a few large files, journal appends      |
//! | `synthetic_sizebias` | periodic whole-file reads, period proportional to file size       |

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{PageKey, TraceEvent};

/// Device id used for every generated page.
const DEV: u64 = 1;
/// Per-page service time range in nanoseconds.
const PAGE_COST_NS: (u64, u64) = (20_000, 100_000);

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("invalid workload configuration: {0}")]
    Config(String),
    #[error("unknown workload kind `{given}` (valid kinds: {valid})")]
    UnknownKind { given: String, valid: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    Webserver,
    Webproxy,
    Varmail,
    Copyfiles,
    Openfiles,
    Mongo,
    SyntheticSizebias,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 7] = [
        WorkloadKind::Webserver,
        WorkloadKind::Webproxy,
        WorkloadKind::Varmail,
        WorkloadKind::Copyfiles,
        WorkloadKind::Openfiles,
        WorkloadKind::Mongo,
        WorkloadKind::SyntheticSizebias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::Webserver => "webserver",
            WorkloadKind::Webproxy => "webproxy",
            WorkloadKind::Varmail => "varmail",
            WorkloadKind::Copyfiles => "copyfiles",
            WorkloadKind::Openfiles => "openfiles",
            WorkloadKind::Mongo => "mongo",
            WorkloadKind::SyntheticSizebias => "synthetic_sizebias",
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WorkloadKind {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WorkloadKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| WorkloadError::UnknownKind {
                given: s.to_string(),
                valid: WorkloadKind::ALL.map(|k| k.name()).join(", "),
            })
    }
}

/// File size in pages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SizeDistribution {
    Fixed {
        pages: u64,
    },
    Uniform {
        min: u64,
        max: u64,
    },
    LogUniform {
        min: u64,
        max: u64,
    },
    /// File `i` has `round(base * ratio^i)` pages.
    Geometric {
        base: u64,
        ratio: f64,
    },
}

impl SizeDistribution {
    fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::Config(m.to_string()));
        match *self {
            SizeDistribution::Fixed { pages: 0 } => bad("fixed file size must be >= 1"),
            SizeDistribution::Uniform { min, max } | SizeDistribution::LogUniform { min, max }
                if min == 0 || min > max =>
            {
                bad("size range needs 1 <= min <= max")
            }
            SizeDistribution::Geometric { base, ratio }
                if base == 0 || !ratio.is_finite() || ratio < 1.0 =>
            {
                bad("geometric sizes need base >= 1 and a finite ratio >= 1")
            }
            _ => Ok(()),
        }
    }

    fn sample(&self, index: u64, rng: &mut impl Rng) -> u64 {
        match *self {
            SizeDistribution::Fixed { pages } => pages,
            SizeDistribution::Uniform { min, max } => rng.random_range(min..=max),
            SizeDistribution::LogUniform { min, max } => {
                let lo = (min as f64).ln();
                let hi = ((max + 1) as f64).ln();
                let v = rng.random_range(lo..hi).exp() as u64;
                v.clamp(min, max)
            }
            SizeDistribution::Geometric { base, ratio } => {
                let v = (base as f64) * ratio.powi(index.min(i32::MAX as u64) as i32);
                if v >= u64::MAX as f64 {
                    u64::MAX
                } else {
                    (v.round() as u64).max(1)
                }
            }
        }
    }
}

/// How file operations pick their target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Popularity {
    Uniform,
    Zipf { exponent: f64 },
}

impl Popularity {
    fn validate(&self) -> Result<(), WorkloadError> {
        match *self {
            Popularity::Zipf { exponent } if !exponent.is_finite() || exponent < 0.0 => Err(
                WorkloadError::Config("zipf exponent must be finite and >= 0".into()),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub seed: u64,
    pub n_ops: u64,
    pub n_files: u64,
    pub file_size_pages: SizeDistribution,
    pub popularity: Popularity,
}

impl WorkloadSpec {
    /// Defaults for `kind`, sized at 50,000 page operations.
    pub fn new(kind: WorkloadKind, seed: u64) -> Self {
        use Popularity::*;
        use SizeDistribution::*;
        let (n_files, file_size_pages, popularity) = match kind {
            WorkloadKind::Webserver => {
                (1000, LogUniform { min: 1, max: 64 }, Zipf { exponent: 0.9 })
            }
            WorkloadKind::Webproxy => {
                (1000, LogUniform { min: 1, max: 32 }, Zipf { exponent: 0.8 })
            }
            WorkloadKind::Varmail => (1000, LogUniform { min: 1, max: 16 }, Uniform),
            WorkloadKind::Copyfiles => (500, LogUniform { min: 1, max: 64 }, Uniform),
            WorkloadKind::Openfiles => (5000, Fixed { pages: 1 }, Uniform),
            WorkloadKind::Mongo => (4, Fixed { pages: 4096 }, Zipf { exponent: 1.0 }),
            WorkloadKind::SyntheticSizebias => (
                10,
                Geometric {
                    base: 2,
                    ratio: 2.0,
                },
                Uniform,
            ),
        };
        Self {
            kind,
            seed,
            n_ops: 50_000,
            n_files,
            file_size_pages,
            popularity,
        }
    }

    pub fn with_ops(mut self, n_ops: u64) -> Self {
        self.n_ops = n_ops;
        self
    }

    pub fn with_files(mut self, n_files: u64) -> Self {
        self.n_files = n_files;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.n_ops > 0 && self.n_files == 0 {
            return Err(WorkloadError::Config("n_files must be >= 1".into()));
        }
        self.file_size_pages.validate()?;
        self.popularity.validate()
    }
}

/// Emits exactly `spec.n_ops` time-sorted access events.
pub fn generate_workload(spec: &WorkloadSpec) -> Result<Vec<TraceEvent>, WorkloadError> {
    spec.validate()?;
    if spec.n_ops == 0 {
        return Ok(Vec::new());
    }
    let mut gen = Generator::new(spec);
    match spec.kind {
        WorkloadKind::Webserver => gen.webserver(),
        WorkloadKind::Webproxy => gen.webproxy(),
        WorkloadKind::Varmail => gen.varmail(),
        WorkloadKind::Copyfiles => gen.copyfiles(),
        WorkloadKind::Openfiles => gen.openfiles(),
        WorkloadKind::Mongo => gen.mongo(),
        WorkloadKind::SyntheticSizebias => gen.sizebias(),
    }
    debug_assert_eq!(gen.events.len() as u64, spec.n_ops);
    Ok(gen.events)
}

/// Inverse-CDF sampler over `n` ranks.
struct RankSampler {
    cdf: Vec<f64>,
}

impl RankSampler {
    fn new(n: usize, popularity: Popularity) -> Self {
        let exponent = match popularity {
            Popularity::Uniform => 0.0,
            Popularity::Zipf { exponent } => exponent,
        };
        let mut acc = 0.0;
        let cdf = (1..=n)
            .map(|rank| {
                acc += 1.0 / (rank as f64).powf(exponent);
                acc
            })
            .collect();
        Self { cdf }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cdf.last().expect("non-empty sampler");
        let u = rng.random_range(0.0..total);
        self.cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1)
    }
}

struct File {
    inode: u64,
    pages: u64,
}

struct Generator {
    rng: ChaCha8Rng,
    spec: WorkloadSpec,
    t: u64,
    events: Vec<TraceEvent>,
    files: Vec<File>,
    next_inode: u64,
}

impl Generator {
    fn new(spec: &WorkloadSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        // bounded so that huge n_files with a tiny op budget stays cheap
        let n = spec.n_files.min(spec.n_ops.max(1) * 4).max(1);
        let files = (0..n)
            .map(|i| File {
                inode: i + 1,
                pages: spec.file_size_pages.sample(i, &mut rng),
            })
            .collect();
        Self {
            rng,
            spec: spec.clone(),
            t: 0,
            events: Vec::with_capacity(spec.n_ops.min(1 << 24) as usize),
            files,
            next_inode: n + 1,
        }
    }

    fn full(&self) -> bool {
        self.events.len() as u64 >= self.spec.n_ops
    }

    fn emit(&mut self, inode: u64, offset: u64) {
        if self.full() {
            return;
        }
        self.events
            .push(TraceEvent::access(self.t, PageKey::new(DEV, inode, offset)));
        self.t += self.rng.random_range(PAGE_COST_NS.0..=PAGE_COST_NS.1);
    }

    fn read_file(&mut self, inode: u64, pages: u64) {
        for off in 0..pages {
            if self.full() {
                break;
            }
            self.emit(inode, off);
        }
    }

    fn fresh_inode(&mut self) -> u64 {
        let inode = self.next_inode;
        self.next_inode += 1;
        inode
    }

    fn sampler(&self) -> RankSampler {
        RankSampler::new(self.files.len(), self.spec.popularity)
    }

    fn webserver(&mut self) {
        let pick = self.sampler();
        let log = self.fresh_inode();
        let mut log_len = 0u64;
        let mut op = 0u64;
        while !self.full() {
            let f = pick.sample(&mut self.rng);
            let (inode, pages) = (self.files[f].inode, self.files[f].pages);
            self.read_file(inode, pages);
            op += 1;
            if op.is_multiple_of(10) {
                self.emit(log, log_len / 4);
                log_len += 1;
            }
        }
    }

    fn webproxy(&mut self) {
        let pick = self.sampler();
        let log = self.fresh_inode();
        let mut log_len = 0u64;
        let mut op = 0u64;
        while !self.full() {
            let f = pick.sample(&mut self.rng);
            if self.rng.random_bool(0.1) {
                // cache object replaced: new inode, fetched and written in full
                self.files[f].inode = self.fresh_inode();
            }
            let (inode, pages) = (self.files[f].inode, self.files[f].pages);
            self.read_file(inode, pages);
            op += 1;
            if op.is_multiple_of(5) {
                self.emit(log, log_len / 8);
                log_len += 1;
            }
        }
    }

    fn varmail(&mut self) {
        let pick = self.sampler();
        while !self.full() {
            let f = pick.sample(&mut self.rng);
            let roll: f64 = self.rng.random();
            if roll < 0.25 {
                // delete and recreate
                let inode = self.fresh_inode();
                let pages = self.spec.file_size_pages.sample(f as u64, &mut self.rng);
                self.files[f] = File { inode, pages };
                self.read_file(inode, pages);
            } else if roll < 0.5 {
                // append one page then read back
                self.files[f].pages += 1;
                let (inode, pages) = (self.files[f].inode, self.files[f].pages);
                self.emit(inode, pages - 1);
                self.read_file(inode, pages);
            } else {
                let (inode, pages) = (self.files[f].inode, self.files[f].pages);
                self.read_file(inode, pages);
            }
        }
    }

    fn copyfiles(&mut self) {
        while !self.full() {
            for f in 0..self.files.len() {
                if self.full() {
                    break;
                }
                let (src, pages) = (self.files[f].inode, self.files[f].pages);
                let dst = self.fresh_inode();
                for off in 0..pages {
                    self.emit(src, off);
                    self.emit(dst, off);
                }
            }
        }
    }

    fn openfiles(&mut self) {
        let pick = self.sampler();
        while !self.full() {
            let f = pick.sample(&mut self.rng);
            let inode = self.files[f].inode;
            self.emit(inode, 0);
        }
    }

    fn mongo(&mut self) {
        const CHUNK: u64 = 8;
        let journal = self.fresh_inode();
        let mut journal_len = 0u64;
        let max_pages = self.files.iter().map(|f| f.pages).max().unwrap_or(1);
        let chunks = RankSampler::new(max_pages.div_ceil(CHUNK) as usize, self.spec.popularity);
        // scatter hot chunks across the file instead of clustering them at the start
        let stride = 7919 % chunks.cdf.len().max(1) as u64;
        let stride = if stride == 0 { 1 } else { stride };
        while !self.full() {
            let f = self.rng.random_range(0..self.files.len());
            let (inode, pages) = (self.files[f].inode, self.files[f].pages);
            let n_chunks = pages.div_ceil(CHUNK);
            let rank = chunks.sample(&mut self.rng) as u64;
            let chunk = (rank * stride) % n_chunks;
            let start = chunk * CHUNK;
            for off in start..(start + CHUNK).min(pages) {
                self.emit(inode, off);
            }
            if self.rng.random_bool(0.1) {
                self.emit(journal, journal_len / 16);
                journal_len += 1;
            }
        }
    }

    fn sizebias(&mut self) {
        // strictly increasing sizes so that period order equals size order
        let mut sizes: Vec<u64> = self.files.iter().map(|f| f.pages).collect();
        sizes.sort_unstable();
        for i in 1..sizes.len() {
            if sizes[i] <= sizes[i - 1] {
                sizes[i] = sizes[i - 1] + 1;
            }
        }
        for (file, pages) in self.files.iter_mut().zip(sizes) {
            file.pages = pages;
        }

        // about half of the time is spent reading; the rest is idle
        let mean_cost = (PAGE_COST_NS.0 + PAGE_COST_NS.1) / 2;
        let unit = 2 * self.files.len() as u64 * mean_cost;
        let mut queue = BinaryHeap::new();
        for (i, file) in self.files.iter().enumerate() {
            let period = unit.saturating_mul(file.pages);
            let phase = self.rng.random_range(0..period.max(1));
            queue.push(Reverse((phase, i)));
        }
        while !self.full() {
            let Reverse((due, i)) = queue.pop().expect("every file stays scheduled");
            self.t = self.t.max(due);
            let (inode, pages) = (self.files[i].inode, self.files[i].pages);
            self.read_file(inode, pages);
            queue.push(Reverse((due.saturating_add(unit.saturating_mul(pages)), i)));
        }
    }
}
