//! Browser bindings. Each export returns a JSON string; the plain functions
//! behind them are ordinary Rust and are tested natively.

use learnedcache::discretizer::fit_quantile_bins;
use learnedcache::features::FEATURE_NAMES;
use learnedcache::pipeline::{eviction_dataset, train_from_traces, PipelineConfig};
use learnedcache::{
    generate_workload, run_simulation, Policy, SimOptions, WorkloadKind, WorkloadSpec, MAX_BINS,
};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Upper bound on trace length so the page stays responsive.
const MAX_OPS: u64 = 200_000;

fn spec(workload: &str, seed: u64, ops: u64) -> Result<WorkloadSpec, String> {
    let kind: WorkloadKind = workload.parse().map_err(|e| format!("{e}"))?;
    if ops > MAX_OPS {
        return Err(format!("at most {MAX_OPS} operations"));
    }
    let s = WorkloadSpec::new(kind, seed).with_ops(ops);
    s.validate().map_err(|e| e.to_string())?;
    Ok(s)
}

/// Quantile bins of one feature over FIFO eviction rows, with per-bin counts.
pub fn histogram_json(
    workload: &str,
    seed: u64,
    ops: u64,
    capacity: u64,
    feature: usize,
) -> Result<String, String> {
    let name = *FEATURE_NAMES
        .get(feature)
        .ok_or("feature index must be 0..=8")?;
    let trace = generate_workload(&spec(workload, seed, ops)?).map_err(|e| e.to_string())?;
    let rows = eviction_dataset(&trace, capacity).map_err(|e| e.to_string())?;
    let values: Vec<u64> = rows.iter().map(|r| r.features.0[feature]).collect();
    if values.is_empty() {
        return Err("no evictions; lower the capacity".into());
    }
    let bins = fit_quantile_bins(&values, MAX_BINS).map_err(|e| e.to_string())?;
    let mut counts = vec![0u64; bins.n_bins() as usize];
    for &v in &values {
        counts[bins.discretize(v) as usize] += 1;
    }
    // u64::MAX does not survive a JS number; report it as null
    let edges: Vec<Option<u64>> = bins
        .edges()
        .iter()
        .map(|&e| (e != learnedcache::MISSING).then_some(e))
        .collect();
    Ok(
        json!({ "feature": name, "rows": values.len(), "edges": edges, "counts": counts })
            .to_string(),
    )
}

/// FIFO insertion rate at `steps` capacities spaced evenly in `[lo, hi]`.
pub fn fifo_curve_json(
    workload: &str,
    seed: u64,
    ops: u64,
    lo: u64,
    hi: u64,
    steps: u32,
) -> Result<String, String> {
    if lo == 0 || lo > hi || steps == 0 || steps > 64 {
        return Err("need 1 <= lo <= hi and 1 <= steps <= 64".into());
    }
    let trace = generate_workload(&spec(workload, seed, ops)?).map_err(|e| e.to_string())?;
    let mut points = Vec::new();
    for i in 0..steps {
        let cap = if steps == 1 {
            lo
        } else {
            lo + (hi - lo) * i as u64 / (steps - 1) as u64
        };
        let r = run_simulation(&trace, &Policy::Fifo, cap, SimOptions::default())
            .map_err(|e| e.to_string())?;
        points.push(json!({ "capacity": cap, "insertion_rate": r.report.insertion_rate }));
    }
    Ok(json!({ "workload": workload, "points": points }).to_string())
}

/// Trains on `n_train` traces, then replays one fresh trace under FIFO and
/// the learned policy.
pub fn compare_json(
    workload: &str,
    seed: u64,
    ops: u64,
    capacity: u64,
    n_train: u32,
    epochs: u32,
) -> Result<String, String> {
    if n_train == 0 || n_train > 8 {
        return Err("training traces must be 1..=8".into());
    }
    let gen = |s: u64| -> Result<_, String> {
        generate_workload(&spec(workload, s, ops)?).map_err(|e| e.to_string())
    };
    let base = seed.wrapping_mul(16);
    let train: Vec<_> = (1..=n_train as u64)
        .map(|i| gen(base + i))
        .collect::<Result<_, _>>()?;
    let test = vec![gen(base + 9)?];
    let eval = gen(base + 10)?;
    let mut cfg = PipelineConfig {
        capacity,
        n_pairs: Some(100_000),
        ..PipelineConfig::default()
    };
    cfg.train.max_epochs = epochs.clamp(1, 50);
    cfg.train.seed = seed;
    let art = train_from_traces(&train, &test, &cfg).map_err(|e| e.to_string())?;
    let opts = SimOptions::default();
    let fifo = run_simulation(&eval, &Policy::Fifo, capacity, opts)
        .map_err(|e| e.to_string())?
        .report;
    let learned = run_simulation(&eval, &Policy::learned(art.pack.clone()), capacity, opts)
        .map_err(|e| e.to_string())?
        .report;
    let weights: Vec<_> = art
        .pack
        .features()
        .iter()
        .map(|f| json!({ "name": f.name, "weights": f.weights_int }))
        .collect();
    Ok(json!({
        "auc": art.test_metrics.auc.is_finite().then_some(art.test_metrics.auc),
        "f1": art.test_metrics.f1,
        "epochs": art.outcome.history.len(),
        "fifo_rate": fifo.insertion_rate,
        "learned_rate": learned.insertion_rate,
        "weights": weights,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn discretizer_histogram(
    workload: &str,
    seed: u32,
    ops: u32,
    capacity: u32,
    feature: u32,
) -> Result<String, JsValue> {
    histogram_json(
        workload,
        seed.into(),
        ops.into(),
        capacity.into(),
        feature as usize,
    )
    .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn fifo_curve(
    workload: &str,
    seed: u32,
    ops: u32,
    lo: u32,
    hi: u32,
    steps: u32,
) -> Result<String, JsValue> {
    fifo_curve_json(
        workload,
        seed.into(),
        ops.into(),
        lo.into(),
        hi.into(),
        steps,
    )
    .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn compare_policies(
    workload: &str,
    seed: u32,
    ops: u32,
    capacity: u32,
    n_train: u32,
    epochs: u32,
) -> Result<String, JsValue> {
    compare_json(
        workload,
        seed.into(),
        ops.into(),
        capacity.into(),
        n_train,
        epochs,
    )
    .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn workload_names() -> String {
    serde_json::to_string(&WorkloadKind::ALL.map(|k| k.name())).expect("static names")
}
