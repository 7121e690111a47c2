//! Trains on the size-biased workload at each capacity given on the command
//! line (default 64) and prints paired-trial results.
//!
//! `cargo run --release -p learnedcache --example sizebias_sweep -- 32 64 128`

use learnedcache::evalstats::run_paired_trials;
use learnedcache::pipeline::{train_from_traces, PipelineConfig};
use learnedcache::trace::{generate_workload, WorkloadKind, WorkloadSpec};

fn main() {
    let mut caps: Vec<u64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("capacity must be an integer"))
        .collect();
    if caps.is_empty() {
        caps.push(64);
    }
    let ops = 50_000;
    let spec = |s| WorkloadSpec::new(WorkloadKind::SyntheticSizebias, s).with_ops(ops);
    let tr: Vec<_> = (1..=4)
        .map(|s| generate_workload(&spec(s)).unwrap())
        .collect();
    let te = vec![generate_workload(&spec(5)).unwrap()];
    for cap in caps {
        let t0 = std::time::Instant::now();
        let cfg = PipelineConfig {
            capacity: cap,
            ..PipelineConfig::default()
        };
        let art = train_from_traces(&tr, &te, &cfg).unwrap();
        let set = run_paired_trials(&spec(0), cap, &art.pack, 50, 7, 8).unwrap();
        let t = set.test();
        let s = set.summarize();
        println!(
            "cap {cap}: rows {} auc {:.4} f1 {:.4} epochs {} | pct {:.3} raw {:.5} p {:?} ({:.1}s)",
            art.n_train_rows,
            art.test_metrics.auc,
            art.test_metrics.f1,
            art.outcome.history.len(),
            s.pct_vs_baseline,
            s.raw_change,
            t.map(|t| t.p_value),
            t0.elapsed().as_secs_f64()
        );
        for f in art.pack.features() {
            println!("   {} {:?}", f.name, f.weights_int);
        }
    }
}
