//! Bradley–Terry pairwise linear ranker over one-hot encoded bins.
//!
//! A page's strength is `β(x) = wᵀx`, where `x` has exactly one active bin
//! per feature, so the score is a sum of nine weights. The probability that
//! page A is reused before page B is `σ(β(x_A) − β(x_B))`. Training minimizes
//! binary cross-entropy of that probability with Adam and early stopping on
//! a held-out pair set.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretizer::Discretizer;
use crate::features::{DatasetRow, FeatureVector, N_FEATURES};

#[derive(Debug, Error, PartialEq)]
pub enum RankerError {
    #[error("one-hot index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: u32, dim: usize },
    #[error("no pair of rows with distinct reuse times exists")]
    NoValidPair,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("AUC undefined: evaluation pairs contain a single class (f1 = {f1})")]
    SingleClass { f1: f64 },
    #[error("evaluation set is empty")]
    EmptyEvaluationSet,
}

/// Flattened one-hot index of the active bin for each feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Encoded(pub [u32; N_FEATURES]);

pub fn encode(features: &FeatureVector, discretizer: &Discretizer) -> Encoded {
    let offsets = discretizer.offsets();
    let mut out = [0u32; N_FEATURES];
    for (f, bins) in discretizer.features().iter().enumerate() {
        out[f] = offsets[f] + bins.discretize(features.0[f]) as u32;
    }
    Encoded(out)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Bradley–Terry probability in its exponential-ratio form.
pub fn bt_prob_exp_ratio(beta_a: f64, beta_b: f64) -> f64 {
    // a common shift leaves the ratio unchanged and keeps exp finite
    let m = beta_a.max(beta_b);
    let (ea, eb) = ((beta_a - m).exp(), (beta_b - m).exp());
    ea / (ea + eb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearRanker {
    discretizer: Discretizer,
    weights: Vec<f64>,
}

impl LinearRanker {
    pub fn zeros(discretizer: Discretizer) -> Self {
        let dim = discretizer.dim();
        Self {
            discretizer,
            weights: vec![0.0; dim],
        }
    }

    pub fn with_weights(discretizer: Discretizer, weights: Vec<f64>) -> Result<Self, RankerError> {
        if weights.len() != discretizer.dim() {
            return Err(RankerError::Config(format!(
                "{} weights for one-hot dimension {}",
                weights.len(),
                discretizer.dim()
            )));
        }
        Ok(Self {
            discretizer,
            weights,
        })
    }

    pub fn discretizer(&self) -> &Discretizer {
        &self.discretizer
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Weights of feature `f`, one per bin.
    pub fn feature_weights(&self, f: usize) -> &[f64] {
        let start = self.discretizer.offsets()[f] as usize;
        let n = self.discretizer.features()[f].n_bins() as usize;
        &self.weights[start..start + n]
    }

    pub fn encode(&self, features: &FeatureVector) -> Encoded {
        encode(features, &self.discretizer)
    }

    /// Sum of the active weights.
    pub fn score(&self, x: &Encoded) -> Result<f64, RankerError> {
        x.0.iter().try_fold(0.0, |acc, &i| {
            self.weights
                .get(i as usize)
                .map(|w| acc + w)
                .ok_or(RankerError::IndexOutOfRange {
                    index: i,
                    dim: self.weights.len(),
                })
        })
    }

    pub fn score_features(&self, features: &FeatureVector) -> f64 {
        score_unchecked(&self.weights, &self.encode(features))
    }

    /// `σ(β_A − β_B)`.
    pub fn predict_prob(&self, xa: &Encoded, xb: &Encoded) -> Result<f64, RankerError> {
        Ok(sigmoid(self.score(xa)? - self.score(xb)?))
    }

    /// `σ(wᵀ(x_A − x_B))` evaluated on the dense difference vector.
    pub fn predict_prob_diff(&self, xa: &Encoded, xb: &Encoded) -> Result<f64, RankerError> {
        let mut diff = vec![0.0; self.weights.len()];
        for (&a, &b) in xa.0.iter().zip(&xb.0) {
            for (i, sign) in [(a, 1.0), (b, -1.0)] {
                let slot = diff
                    .get_mut(i as usize)
                    .ok_or(RankerError::IndexOutOfRange {
                        index: i,
                        dim: self.weights.len(),
                    })?;
                *slot += sign;
            }
        }
        let z: f64 = self.weights.iter().zip(&diff).map(|(w, d)| w * d).sum();
        Ok(sigmoid(z))
    }
}

#[inline]
fn score_unchecked(weights: &[f64], x: &Encoded) -> f64 {
    x.0.iter().map(|&i| weights[i as usize]).sum()
}

/// Two encoded candidates; `label = 1` when A is reused sooner than B.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankPair {
    pub xa: Encoded,
    pub xb: Encoded,
    pub label: u8,
}

impl RankPair {
    pub fn flipped_label(&self) -> Self {
        Self {
            label: 1 - self.label,
            ..*self
        }
    }
}

/// Default pair budget: `min(500_000, 50 × rows)`.
pub fn default_pair_budget(n_rows: usize) -> u64 {
    (n_rows as u64).saturating_mul(50).min(500_000)
}

/// Uniformly samples row pairs with distinct reuse times. A missing reuse
/// time compares greater than every observed one.
pub fn sample_pairs(
    rows: &[DatasetRow],
    discretizer: &Discretizer,
    n_pairs: u64,
    seed: u64,
) -> Result<Vec<RankPair>, RankerError> {
    let first = rows.first().ok_or(RankerError::NoValidPair)?;
    if rows.iter().all(|r| r.reuse_time_ns == first.reuse_time_ns) {
        return Err(RankerError::NoValidPair);
    }
    let encoded: Vec<Encoded> = rows
        .iter()
        .map(|r| encode(&r.features, discretizer))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n_pairs as usize);
    while (pairs.len() as u64) < n_pairs {
        let a = rng.random_range(0..rows.len());
        let b = rng.random_range(0..rows.len());
        let (ra, rb) = (rows[a].reuse_time_ns, rows[b].reuse_time_ns);
        if ra == rb {
            continue;
        }
        pairs.push(RankPair {
            xa: encoded[a],
            xb: encoded[b],
            label: u8::from(ra < rb),
        });
    }
    Ok(pairs)
}

/// Mean BCE over `pairs` plus `l2/2 ‖w‖²`.
pub fn batch_loss(weights: &[f64], pairs: &[RankPair], l2: f64) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let sum: f64 = pairs
        .iter()
        .map(|p| {
            let d = score_unchecked(weights, &p.xa) - score_unchecked(weights, &p.xb);
            softplus(d) - p.label as f64 * d
        })
        .sum();
    sum / pairs.len() as f64 + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Analytic gradient of [`batch_loss`]; accumulates into `grad` and returns
/// the loss.
pub fn batch_gradient(weights: &[f64], pairs: &[RankPair], l2: f64, grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    if pairs.is_empty() {
        return 0.0;
    }
    let inv = 1.0 / pairs.len() as f64;
    let mut loss = 0.0;
    for p in pairs {
        let d = score_unchecked(weights, &p.xa) - score_unchecked(weights, &p.xb);
        let y = p.label as f64;
        loss += softplus(d) - y * d;
        let g = (sigmoid(d) - y) * inv;
        for &i in &p.xa.0 {
            grad[i as usize] += g;
        }
        for &i in &p.xb.0 {
            grad[i as usize] -= g;
        }
    }
    let mut sq = 0.0;
    if l2 != 0.0 {
        for (g, w) in grad.iter_mut().zip(weights) {
            *g += l2 * w;
            sq += w * w;
        }
    }
    loss * inv + 0.5 * l2 * sq
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: u32,
    pub batch_size: u32,
    pub patience: u32,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// L2 penalty; zero disables it.
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 50,
            batch_size: 512,
            patience: 5,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            l2: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), RankerError> {
        let bad = |m: &str| Err(RankerError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1");
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.l2.is_nan() || self.l2 < 0.0 {
            return bad("l2 must be >= 0");
        }
        Ok(())
    }
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(dim: usize, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    fn update(&mut self, weights: &mut [f64], grad: &[f64]) {
        self.step = self.step.saturating_add(1);
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((w, g), (m, v)) in weights
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
    /// NaN when the validation pairs hold a single class.
    pub val_auc: f64,
    pub val_f1: f64,
}

/// One row per epoch: `epoch,train_loss,val_loss,val_auc,val_f1`.
pub fn write_history_csv<W: std::io::Write>(
    history: &[EpochRecord],
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub ranker: LinearRanker,
    pub history: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: u32,
}

/// Adam on mean BCE with early stopping on validation loss. Weights start at
/// zero; the best epoch's weights are restored at the end. With no
/// validation pairs the training loss is monitored instead.
pub fn train(
    train_pairs: &[RankPair],
    val_pairs: &[RankPair],
    discretizer: Discretizer,
    config: &TrainConfig,
) -> Result<TrainOutcome, RankerError> {
    config.validate()?;
    if train_pairs.is_empty() {
        return Err(RankerError::EmptyTrainingSet);
    }
    let mut ranker = LinearRanker::zeros(discretizer);
    let dim = ranker.weights.len();
    for p in train_pairs.iter().chain(val_pairs) {
        for &i in p.xa.0.iter().chain(&p.xb.0) {
            if i as usize >= dim {
                return Err(RankerError::IndexOutOfRange { index: i, dim });
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(dim, config);
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size as usize);
    let mut grad = vec![0.0; dim];

    let mut history = Vec::new();
    let mut best = (f64::INFINITY, ranker.weights.clone(), 0u32);
    let mut stale = 0u32;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size as usize) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_pairs[i]));
            loss_sum +=
                batch_gradient(&ranker.weights, &batch, config.l2, &mut grad) * chunk.len() as f64;
            adam.update(&mut ranker.weights, &grad);
        }
        let train_loss = loss_sum / train_pairs.len() as f64;

        let (val_loss, val_auc, val_f1) = if val_pairs.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            let loss = batch_loss(&ranker.weights, val_pairs, config.l2);
            match evaluate(&ranker, val_pairs) {
                Ok(m) => (loss, m.auc, m.f1),
                Err(RankerError::SingleClass { f1 }) => (loss, f64::NAN, f1),
                Err(e) => return Err(e),
            }
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_auc,
            val_f1,
        });

        let monitored = if val_pairs.is_empty() {
            train_loss
        } else {
            val_loss
        };
        if monitored < best.0 {
            best = (monitored, ranker.weights.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    ranker.weights = best.1;
    Ok(TrainOutcome {
        ranker,
        history,
        best_epoch: best.2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub f1: f64,
}

/// Rank AUC of score differences with 0.5 credit for ties, and F1 at
/// `p = 0.5` (positive iff the difference is > 0).
pub fn evaluate(ranker: &LinearRanker, pairs: &[RankPair]) -> Result<Metrics, RankerError> {
    let mut scores = Vec::with_capacity(pairs.len());
    let mut labels = Vec::with_capacity(pairs.len());
    for p in pairs {
        scores.push(ranker.score(&p.xa)? - ranker.score(&p.xb)?);
        labels.push(p.label == 1);
    }
    metrics_from_scores(&scores, &labels)
}

pub fn metrics_from_scores(scores: &[f64], labels: &[bool]) -> Result<Metrics, RankerError> {
    if scores.is_empty() {
        return Err(RankerError::EmptyEvaluationSet);
    }
    let f1 = f1_at_zero(scores, labels);
    let auc = rank_auc(scores, labels).ok_or(RankerError::SingleClass { f1 })?;
    Ok(Metrics { auc, f1 })
}

fn f1_at_zero(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s > 0.0, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Mann–Whitney AUC with mid-ranks for ties; `None` for a single class.
pub fn rank_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie group shares the mean rank
        let mid = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += mid * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}
