//! Paired-trial harness and the two-tailed paired t-test.

mod student_t;

pub use student_t::{ln_gamma, reg_inc_beta, t_cdf, t_critical, t_two_tailed_p};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modelpack::ModelPack;
use crate::simcache::{run_simulation, Policy, SimError, SimOptions};
use crate::trace::{generate_workload, WorkloadError, WorkloadSpec};

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 differences, got {0}")]
    TooFew(usize),
    #[error("all differences are identical ({0}); the t statistic is undefined")]
    Degenerate(f64),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least 2 trials, got {0}")]
    TooFewTrials(u32),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("trial {0} produced no accesses")]
    EmptyTrial(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    #[serde(rename = "t")]
    pub t_stat: f64,
    pub df: u32,
    #[serde(rename = "p")]
    pub p_value: f64,
    pub ci95: (f64, f64),
    #[serde(rename = "dz")]
    pub effect_size_dz: f64,
    pub mean_diff: f64,
    /// `100 × mean(d) / mean(baseline)` when a baseline is known.
    #[serde(rename = "pct")]
    pub pct_vs_baseline: Option<f64>,
}

impl TestResult {
    pub fn significant(&self) -> bool {
        self.p_value < ALPHA
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Two-tailed one-sample t-test of the paired differences against zero.
pub fn paired_t_test(d: &[f64]) -> Result<TestResult, StatsError> {
    let n = d.len();
    if n < 2 {
        return Err(StatsError::TooFew(n));
    }
    let m = mean(d);
    if d.iter().all(|&x| x == d[0]) {
        return Err(StatsError::Degenerate(d[0]));
    }
    let var = d.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd.is_nan() || sd <= 0.0 {
        return Err(StatsError::Degenerate(d[0]));
    }
    let se = sd / (n as f64).sqrt();
    let df = (n - 1) as u32;
    let t = m / se;
    let half = t_critical(0.975, df) * se;
    Ok(TestResult {
        t_stat: t,
        df,
        p_value: t_two_tailed_p(t, df),
        ci95: (m - half, m + half),
        effect_size_dz: m / sd,
        mean_diff: m,
        pct_vs_baseline: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOrder {
    NormalFirst,
    ModelFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub seed: u64,
    pub order: RunOrder,
    pub normal_rate: f64,
    pub model_rate: f64,
}

impl Trial {
    pub fn difference(&self) -> f64 {
        self.model_rate - self.normal_rate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTrialSet {
    pub workload: WorkloadSpec,
    pub capacity: u64,
    pub master_seed: u64,
    pub trials: Vec<Trial>,
    /// Trials in which neither policy had to evict.
    pub warnings: Vec<String>,
}

/// Per-trial seeds and run orders, drawn from one stream.
pub fn trial_plan(master_seed: u64, n_trials: u32) -> Vec<(u64, RunOrder)> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    (0..n_trials)
        .map(|_| {
            let seed = rng.random::<u64>();
            let order = if rng.random_bool(0.5) {
                RunOrder::NormalFirst
            } else {
                RunOrder::ModelFirst
            };
            (seed, order)
        })
        .collect()
}

fn run_trial(
    workload: &WorkloadSpec,
    capacity: u64,
    model: &Policy,
    index: u32,
    seed: u64,
    order: RunOrder,
) -> Result<(Trial, bool), EvalError> {
    let trace = generate_workload(&workload.clone().with_seed(seed))?;
    let opts = SimOptions::default();
    let policies = match order {
        RunOrder::NormalFirst => [&Policy::Fifo, model],
        RunOrder::ModelFirst => [model, &Policy::Fifo],
    };
    let mut normal = None;
    let mut learned = None;
    for p in policies {
        let report = run_simulation(&trace, p, capacity, opts)?.report;
        match p {
            Policy::Fifo => normal = Some(report),
            Policy::Learned { .. } => learned = Some(report),
        }
    }
    let (normal, learned) = (normal.expect("ran fifo"), learned.expect("ran model"));
    let normal_rate = normal.insertion_rate.ok_or(EvalError::EmptyTrial(index))?;
    let model_rate = learned.insertion_rate.ok_or(EvalError::EmptyTrial(index))?;
    let evicted = normal.evictions > 0 || learned.evictions > 0;
    Ok((
        Trial {
            seed,
            order,
            normal_rate,
            model_rate,
        },
        evicted,
    ))
}

/// Runs `n_trials` paired FIFO-vs-model replays, each on a freshly seeded
/// trace. `jobs > 1` spreads trials over threads; results do not depend on it.
pub fn run_paired_trials(
    workload: &WorkloadSpec,
    capacity: u64,
    pack: &ModelPack,
    n_trials: u32,
    master_seed: u64,
    jobs: usize,
) -> Result<PairedTrialSet, EvalError> {
    if n_trials < 2 {
        return Err(EvalError::TooFewTrials(n_trials));
    }
    workload.validate()?;
    let model = Policy::learned(pack.clone());
    let plan = trial_plan(master_seed, n_trials);
    let jobs = jobs.clamp(1, plan.len());

    let mut results: Vec<Option<Result<(Trial, bool), EvalError>>> =
        (0..plan.len()).map(|_| None).collect();
    if jobs == 1 {
        for (i, &(seed, order)) in plan.iter().enumerate() {
            results[i] = Some(run_trial(workload, capacity, &model, i as u32, seed, order));
        }
    } else {
        let chunk = plan.len().div_ceil(jobs);
        std::thread::scope(|s| {
            for (c, slots) in results.chunks_mut(chunk).enumerate() {
                let plan = &plan;
                let model = &model;
                s.spawn(move || {
                    for (j, slot) in slots.iter_mut().enumerate() {
                        let i = c * chunk + j;
                        let (seed, order) = plan[i];
                        *slot = Some(run_trial(workload, capacity, model, i as u32, seed, order));
                    }
                });
            }
        });
    }

    let mut trials = Vec::with_capacity(plan.len());
    let mut warnings = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        let (trial, evicted) = r.expect("every slot filled")?;
        if !evicted {
            warnings.push(format!(
                "trial {i}: no evictions occurred (degenerate workload)"
            ));
        }
        trials.push(trial);
    }
    Ok(PairedTrialSet {
        workload: workload.clone(),
        capacity,
        master_seed,
        trials,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub workload: String,
    pub pct_vs_baseline: f64,
    pub raw_change: f64,
    pub significant: bool,
    pub p_value: Option<f64>,
}

impl PairedTrialSet {
    pub fn differences(&self) -> Vec<f64> {
        self.trials.iter().map(Trial::difference).collect()
    }

    pub fn mean_normal_rate(&self) -> f64 {
        mean(
            &self
                .trials
                .iter()
                .map(|t| t.normal_rate)
                .collect::<Vec<_>>(),
        )
    }

    pub fn pct_vs_baseline(&self) -> f64 {
        let base = self.mean_normal_rate();
        let m = mean(&self.differences());
        if m == 0.0 {
            0.0
        } else {
            100.0 * m / base
        }
    }

    pub fn test(&self) -> Result<TestResult, StatsError> {
        let mut r = paired_t_test(&self.differences())?;
        r.pct_vs_baseline = Some(self.pct_vs_baseline());
        Ok(r)
    }

    pub fn summarize(&self) -> SummaryRow {
        let test = self.test().ok();
        SummaryRow {
            workload: self.workload.kind.to_string(),
            pct_vs_baseline: self.pct_vs_baseline(),
            raw_change: mean(&self.differences()),
            significant: test.is_some_and(|t| t.significant()),
            p_value: test.map(|t| t.p_value),
        }
    }

    /// Machine-readable trial set with the test block (null if degenerate).
    pub fn to_json(&self) -> serde_json::Value {
        let test = self.test();
        serde_json::json!({
            "workload": self.workload.kind.to_string(),
            "workload_spec": self.workload,
            "capacity": self.capacity,
            "n_trials": self.trials.len(),
            "master_seed": self.master_seed,
            "trials": self.trials,
            "test": test.as_ref().ok(),
            "degenerate": test.is_err(),
            "pct_vs_baseline": self.pct_vs_baseline(),
            "warnings": self.warnings,
        })
    }
}

pub fn write_summary_csv<W: std::io::Write>(rows: &[SummaryRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "workload",
        "pct_vs_baseline",
        "raw_change",
        "significant",
        "p_value",
    ])?;
    for r in rows {
        w.write_record([
            r.workload.clone(),
            format!("{:.4}", r.pct_vs_baseline),
            format!("{:.6}", r.raw_change),
            r.significant.to_string(),
            r.p_value.map_or_else(String::new, |p| format!("{p:.6e}")),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::WorkloadKind;
    use proptest::prelude::*;

    #[test]
    fn reference_vector() {
        let r = paired_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(r.mean_diff, 3.0);
        assert_eq!(r.df, 4);
        assert!((r.t_stat - 4.242_640_687_119_285).abs() < 1e-12);
        assert!((r.p_value - 0.013_235_599_563_682_695).abs() < 1e-10);
        assert!(r.ci95.0 <= r.mean_diff && r.mean_diff <= r.ci95.1);
        assert!(r.significant());
    }

    #[test]
    fn negation_symmetry() {
        let d = [0.3, -0.1, 0.7, 0.2, 0.05];
        let neg: Vec<f64> = d.iter().map(|x| -x).collect();
        let a = paired_t_test(&d).unwrap();
        let b = paired_t_test(&neg).unwrap();
        assert_eq!(a.p_value, b.p_value);
        assert_eq!(a.t_stat, -b.t_stat);
        assert!((a.ci95.0 + b.ci95.1).abs() < 1e-15 && (a.ci95.1 + b.ci95.0).abs() < 1e-15);
    }

    fn non_degenerate() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-5.0f64..5.0, 2..40).prop_filter("needs spread", |d| {
            d.iter().any(|&x| (x - d[0]).abs() > 1e-6)
        })
    }

    proptest! {
        #[test]
        fn sign_flip_keeps_p(d in non_degenerate()) {
            let neg: Vec<f64> = d.iter().map(|x| -x).collect();
            let (a, b) = (paired_t_test(&d).unwrap(), paired_t_test(&neg).unwrap());
            prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
            prop_assert!((a.t_stat + b.t_stat).abs() < 1e-9 * a.t_stat.abs().max(1.0));
        }

        #[test]
        fn scaling_keeps_t_and_scales_ci(d in non_degenerate(), k in 0.01f64..100.0) {
            let scaled: Vec<f64> = d.iter().map(|x| k * x).collect();
            let (a, b) = (paired_t_test(&d).unwrap(), paired_t_test(&scaled).unwrap());
            prop_assert!((a.t_stat - b.t_stat).abs() < 1e-8 * a.t_stat.abs().max(1.0));
            prop_assert!((a.p_value - b.p_value).abs() < 1e-9);
            prop_assert!((k * a.ci95.0 - b.ci95.0).abs() < 1e-8 * b.ci95.0.abs().max(1.0));
            prop_assert!((k * a.ci95.1 - b.ci95.1).abs() < 1e-8 * b.ci95.1.abs().max(1.0));
        }

        #[test]
        fn significance_iff_ci_excludes_zero(d in non_degenerate()) {
            let r = paired_t_test(&d).unwrap();
            // skip the razor's edge where rounding decides
            prop_assume!((r.p_value - ALPHA).abs() > 1e-9);
            prop_assert_eq!(r.p_value < ALPHA, r.ci95.0 > 0.0 || r.ci95.1 < 0.0);
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(
            paired_t_test(&[2.0, 2.0, 2.0]),
            Err(StatsError::Degenerate(2.0))
        );
        assert_eq!(paired_t_test(&[1.0]), Err(StatsError::TooFew(1)));
    }

    #[test]
    fn zero_model_trials_are_flat() {
        let spec = WorkloadSpec::new(WorkloadKind::Webserver, 0).with_ops(2_000);
        let set = run_paired_trials(&spec, 64, &ModelPack::zeros(), 2, 9, 1).unwrap();
        assert!(set.differences().iter().all(|&d| d == 0.0));
        let row = set.summarize();
        assert_eq!(row.pct_vs_baseline, 0.0);
        assert!(!row.significant);
        assert_eq!(set.to_json()["degenerate"], true);
        assert!(matches!(
            run_paired_trials(&spec, 64, &ModelPack::zeros(), 1, 9, 1),
            Err(EvalError::TooFewTrials(1))
        ));
    }

    #[test]
    fn huge_cache_is_flagged() {
        let spec = WorkloadSpec::new(WorkloadKind::Openfiles, 0).with_ops(500);
        let set = run_paired_trials(&spec, 1 << 20, &ModelPack::zeros(), 2, 1, 1).unwrap();
        assert_eq!(set.warnings.len(), 2);
    }

    #[test]
    fn summary_by_hand() {
        let set = PairedTrialSet {
            workload: WorkloadSpec::new(WorkloadKind::Varmail, 0),
            capacity: 1,
            master_seed: 0,
            trials: [(0.5, 0.4), (0.5, 0.45), (0.6, 0.5)]
                .iter()
                .map(|&(n, m)| Trial {
                    seed: 0,
                    order: RunOrder::NormalFirst,
                    normal_rate: n,
                    model_rate: m,
                })
                .collect(),
            warnings: vec![],
        };
        let row = set.summarize();
        // d = [-0.1, -0.05, -0.1]; mean -0.08333; baseline mean 0.53333
        assert!((row.raw_change + 0.083_333_333_333).abs() < 1e-9);
        assert!((row.pct_vs_baseline + 15.625).abs() < 1e-9);
        let mut out = Vec::new();
        write_summary_csv(&[row], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with(
            "workload,pct_vs_baseline,raw_change,significant,p_value\nvarmail,-15.6250,"
        ));
    }
}
