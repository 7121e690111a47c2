use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use learnedcache::evalstats::{run_paired_trials, write_summary_csv, EvalError};
use learnedcache::modelpack::PackError;
use learnedcache::pipeline::{train_from_traces, PipelineConfig, PipelineError};
use learnedcache::ranker::{write_history_csv, RankerError};
use learnedcache::simcache::{write_latency_csv, Reclaim, SimError, DEFAULT_OVERSAMPLE};
use learnedcache::trace::{export_csv, read_trace, write_trace, TraceError, WorkloadError};
use learnedcache::{
    generate_workload, run_simulation, ModelPack, Policy, SimOptions, WorkloadKind, WorkloadSpec,
};
use thiserror::Error;

#[derive(Parser, Debug)]
#[command(
    name = "learnedcache",
    version,
    about = "Page-cache eviction simulator with a learned ranker"
)]
struct Cli {
    /// Seed for every randomized stage.
    #[arg(long, global = true, env = "LEARNEDCACHE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic workload trace.
    GenTrace(GenTraceArgs),
    /// Train a ranker from FIFO replays and export a model pack.
    Train(TrainArgs),
    /// Replay a trace through the cache simulator.
    Simulate(SimulateArgs),
    /// Paired FIFO-vs-model trials with a paired t-test.
    PairedEval(PairedEvalArgs),
}

#[derive(Args, Debug)]
struct GenTraceArgs {
    /// One of: webserver, webproxy, varmail, copyfiles, openfiles, mongo, synthetic_sizebias.
    #[arg(long)]
    workload: String,
    #[arg(long, default_value_t = 50_000)]
    ops: u64,
    /// Number of files; the workload default when omitted.
    #[arg(long)]
    files: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the trace as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, num_args = 1.., required = true)]
    traces: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    test: Vec<PathBuf>,
    /// Training pairs; defaults to min(500000, 50 x rows).
    #[arg(long)]
    pairs: Option<u64>,
    #[arg(long, default_value_t = 50)]
    epochs: u32,
    #[arg(long, default_value_t = 512)]
    batch: u32,
    /// Cache size for the FIFO replay that labels evictions.
    #[arg(long, default_value_t = 64)]
    capacity: u64,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `<out stem>.history.csv`.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Defaults to `<out stem>.metrics.json`.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum PolicyArg {
    Fifo,
    Learned,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, value_enum, default_value_t = PolicyArg::Fifo)]
    policy: PolicyArg,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    capacity: u64,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = DEFAULT_OVERSAMPLE)]
    oversample: u8,
    /// Time each eviction decision (wall clock, not reproducible).
    #[arg(long)]
    latency: bool,
    /// Write per-decision latencies as CSV; implies --latency.
    #[arg(long)]
    latency_samples: Option<PathBuf>,
    /// Request a full 32-page batch on every eviction.
    #[arg(long)]
    full_batch: bool,
}

#[derive(Args, Debug)]
struct PairedEvalArgs {
    #[arg(long)]
    workload: String,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    capacity: u64,
    #[arg(long, default_value_t = 50)]
    trials: u32,
    /// Access events per trial trace.
    #[arg(long, default_value_t = 50_000)]
    ops: u64,
    #[arg(long)]
    files: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `<out stem>.summary.csv`.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<WorkloadError> for CliError {
    fn from(e: WorkloadError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Unsorted(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::NoTraces(_) | PipelineError::NoRows(_) => {
                CliError::Config(e.to_string())
            }
            PipelineError::Ranker(RankerError::Config(_) | RankerError::NoValidPair) => {
                CliError::Config(e.to_string())
            }
            PipelineError::Sim(s) => s.into(),
            PipelineError::Dataset(_) => CliError::Io(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Workload(w) => w.into(),
            EvalError::Sim(s) => s.into(),
            EvalError::TooFewTrials(_) | EvalError::EmptyTrial(_) => {
                CliError::Config(e.to_string())
            }
        }
    }
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}{suffix}"))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    let mut s =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn load_trace(path: &Path) -> Result<Vec<learnedcache::TraceEvent>, CliError> {
    read_trace(path).map_err(|e| match e {
        TraceError::Io(io) => CliError::io(path, io),
        other => CliError::io(path, other),
    })
}

fn load_pack(path: &Path) -> Result<ModelPack, CliError> {
    ModelPack::load_json(path).map_err(|e| match e {
        PackError::Io(_) | PackError::Json(_) | PackError::Validation { .. } => {
            CliError::io(path, e)
        }
        PackError::Overflow { .. } => CliError::Internal(e.to_string()),
    })
}

fn workload_spec(
    name: &str,
    seed: u64,
    ops: u64,
    files: Option<u64>,
) -> Result<WorkloadSpec, CliError> {
    let kind: WorkloadKind = name.parse()?;
    let mut spec = WorkloadSpec::new(kind, seed).with_ops(ops);
    if let Some(f) = files {
        spec = spec.with_files(f);
    }
    spec.validate()?;
    Ok(spec)
}

struct Ctx {
    seed: u64,
    verbose: bool,
}

impl Ctx {
    fn log(&self, msg: impl FnOnce() -> String) {
        if self.verbose {
            eprintln!("{}", msg());
        }
    }
}

fn gen_trace(ctx: &Ctx, a: &GenTraceArgs) -> Result<(), CliError> {
    let spec = workload_spec(&a.workload, ctx.seed, a.ops, a.files)?;
    let events = generate_workload(&spec)?;
    ctx.log(|| format!("generated {} events for {}", events.len(), spec.kind));
    write_trace(&events, &a.out).map_err(|e| CliError::io(&a.out, e))?;
    if let Some(csv) = &a.csv {
        export_csv(&events, csv).map_err(|e| CliError::io(csv, e))?;
    }
    Ok(())
}

fn train(ctx: &Ctx, a: &TrainArgs) -> Result<(), CliError> {
    let train_traces = a
        .traces
        .iter()
        .map(|p| load_trace(p))
        .collect::<Result<Vec<_>, _>>()?;
    let test_traces = a
        .test
        .iter()
        .map(|p| load_trace(p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut cfg = PipelineConfig {
        capacity: a.capacity,
        n_pairs: a.pairs,
        ..PipelineConfig::default()
    };
    cfg.train.max_epochs = a.epochs;
    cfg.train.batch_size = a.batch;
    cfg.train.seed = ctx.seed;
    let art = train_from_traces(&train_traces, &test_traces, &cfg)?;
    ctx.log(|| {
        format!(
            "rows {}/{} pairs {}/{}/{} epochs {} (best {}) auc {:.4} f1 {:.4}",
            art.n_train_rows,
            art.n_test_rows,
            art.n_train_pairs,
            art.n_val_pairs,
            art.n_test_pairs,
            art.outcome.history.len(),
            art.outcome.best_epoch,
            art.test_metrics.auc,
            art.test_metrics.f1
        )
    });

    art.pack
        .export_json(&a.out)
        .map_err(|e| CliError::io(&a.out, e))?;
    let history = a
        .history
        .clone()
        .unwrap_or_else(|| sibling(&a.out, ".history.csv"));
    write_history_csv(&art.outcome.history, create(&history)?)
        .map_err(|e| CliError::io(&history, e))?;

    let m = art.test_metrics;
    let metrics = serde_json::json!({
        "auc": m.auc.is_finite().then_some(m.auc),
        "f1": m.f1,
        "auc_ge_f1": !art.auc_below_f1(),
        "best_epoch": art.outcome.best_epoch,
        "epochs_run": art.outcome.history.len(),
        "train_rows": art.n_train_rows,
        "test_rows": art.n_test_rows,
        "train_pairs": art.n_train_pairs,
        "val_pairs": art.n_val_pairs,
        "test_pairs": art.n_test_pairs,
    });
    let metrics_path = a
        .metrics
        .clone()
        .unwrap_or_else(|| sibling(&a.out, ".metrics.json"));
    write_text(&metrics_path, &to_json(&metrics)?)?;

    let warning = sibling(&a.out, ".warning.txt");
    if art.auc_below_f1() {
        let msg = format!("held-out AUC {:.6} is below F1 {:.6}\n", m.auc, m.f1);
        eprintln!("warning: {}", msg.trim_end());
        write_text(&warning, &msg)?;
    } else if warning.exists() {
        fs::remove_file(&warning).map_err(|e| CliError::io(&warning, e))?;
    }
    Ok(())
}

fn simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<(), CliError> {
    let policy = match (a.policy, &a.model) {
        (PolicyArg::Fifo, _) => Policy::Fifo,
        (PolicyArg::Learned, Some(m)) => Policy::Learned {
            pack: load_pack(m)?,
            oversample: a.oversample,
        },
        (PolicyArg::Learned, None) => {
            return Err(CliError::Config("--policy learned requires --model".into()))
        }
    };
    let trace = load_trace(&a.trace)?;
    let opts = SimOptions {
        record_latency: a.latency || a.latency_samples.is_some(),
        record_events: false,
        reclaim: if a.full_batch {
            Reclaim::FullBatch
        } else {
            Reclaim::Overflow
        },
    };
    let mut report = run_simulation(&trace, &policy, a.capacity, opts)?.report;
    if let Some(path) = &a.latency_samples {
        write_latency_csv(&report.latency_samples_ns, create(path)?)
            .map_err(|e| CliError::io(path, e))?;
        report.latency_ns.samples_path = Some(path.display().to_string());
    }
    ctx.log(|| {
        format!(
            "{} insertion rate {:?}",
            report.policy, report.insertion_rate
        )
    });
    write_text(&a.report, &to_json(&report)?)
}

fn paired_eval(ctx: &Ctx, a: &PairedEvalArgs) -> Result<(), CliError> {
    let spec = workload_spec(&a.workload, 0, a.ops, a.files)?;
    let pack = load_pack(&a.model)?;
    let set = run_paired_trials(&spec, a.capacity, &pack, a.trials, ctx.seed, a.jobs)?;
    for w in &set.warnings {
        eprintln!("warning: {w}");
    }
    let row = set.summarize();
    ctx.log(|| {
        format!(
            "{}: {:.3}% (p = {:?})",
            row.workload, row.pct_vs_baseline, row.p_value
        )
    });
    if row.p_value.is_none() {
        eprintln!("warning: degenerate sample, all paired differences are identical");
    }
    write_text(&a.out, &to_json(&set.to_json())?)?;
    let summary = a
        .summary
        .clone()
        .unwrap_or_else(|| sibling(&a.out, ".summary.csv"));
    write_summary_csv(&[row], create(&summary)?).map_err(|e| CliError::io(&summary, e))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Ctx {
        seed: cli.seed,
        verbose: cli.verbose,
    };
    match &cli.command {
        Command::GenTrace(a) => gen_trace(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::PairedEval(a) => paired_eval(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e}");
            ExitCode::from(e.code())
        }
    }
}
