//! ε-insensitive support vector regression with a Gaussian kernel.
//!
//! The dual is solved in the usual 2n-variable form
//!
//! ```text
//! min ½ αᵀQα + pᵀα   s.t.  Σ y_t α_t = 0,  0 ≤ α_t ≤ C
//! α = [α⁺; α⁻],  y = [+1; −1],  p = [ε − z; ε + z],  Q_st = y_s y_t k(x_s, x_t)
//! ```
//!
//! by SMO with second-order working-set selection. Targets are centred
//! before solving and the mean is added back to the bias, so shifting all
//! targets by a constant moves only the bias.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{prediction_metrics, AnalyticsError, LayerFeatureRecord, PredictionMetrics};
use crate::math;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SvrError {
    #[error("invalid hyperparameter `{name}` = {value}")]
    InvalidHyperparameter { name: &'static str, value: f64 },
    #[error("empty training set")]
    Empty,
    #[error("row {row} has {got} features, expected {expected}")]
    Dimension { row: usize, expected: usize, got: usize },
    #[error("non-finite value in training data (row {0})")]
    NonFinite(usize),
    #[error("length mismatch: {0} rows vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("no convergence after {iterations} iterations (KKT residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("model was trained on {expected}, input is {got}")]
    FeatureSetMismatch { expected: String, got: String },
    #[error("model has no feature set; use `predict` with raw features")]
    NoFeatureSet,
    #[error("need at least {need} records, got {got}")]
    TooFewRecords { need: usize, got: usize },
    #[error("invalid protocol: {0}")]
    Protocol(&'static str),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
}

/// Regularization `c`, tube half-width `epsilon` and kernel width
/// `gamma` (`None` means `1 / d` for `d` features).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvrHyperparams {
    pub c: f64,
    pub epsilon: f64,
    pub gamma: Option<f64>,
}

impl Default for SvrHyperparams {
    fn default() -> Self {
        Self {
            c: 10.0,
            epsilon: 0.5,
            gamma: None,
        }
    }
}

impl SvrHyperparams {
    pub fn validate(&self) -> Result<(), SvrError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(SvrError::InvalidHyperparameter { name: "c", value: self.c });
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(SvrError::InvalidHyperparameter {
                name: "epsilon",
                value: self.epsilon,
            });
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(SvrError::InvalidHyperparameter { name: "gamma", value: g });
            }
        }
        Ok(())
    }
}

/// Solver controls. `tolerance` bounds the maximal KKT violation
/// `max_{I_up} −y_t∇_t + max_{I_low} y_t∇_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 1_000_000,
        }
    }
}

/// Input combinations compared for roughness prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureSet {
    #[serde(rename = "PVHS")]
    Pvhs,
    #[serde(rename = "PVHS+angle")]
    PvhsAngle,
    #[serde(rename = "PVHS+count")]
    PvhsCount,
    #[serde(rename = "VED")]
    Ved,
    #[serde(rename = "VED+angle")]
    VedAngle,
    #[serde(rename = "COUNT")]
    Count,
    #[serde(rename = "VED+count")]
    VedCount,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 7] = [
        FeatureSet::Pvhs,
        FeatureSet::PvhsAngle,
        FeatureSet::PvhsCount,
        FeatureSet::Ved,
        FeatureSet::VedAngle,
        FeatureSet::Count,
        FeatureSet::VedCount,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Pvhs => "PVHS",
            FeatureSet::PvhsAngle => "PVHS+angle",
            FeatureSet::PvhsCount => "PVHS+count",
            FeatureSet::Ved => "VED",
            FeatureSet::VedAngle => "VED+angle",
            FeatureSet::Count => "COUNT",
            FeatureSet::VedCount => "VED+count",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }

    pub fn dim(self) -> usize {
        match self {
            FeatureSet::Pvhs => 3,
            FeatureSet::PvhsAngle | FeatureSet::PvhsCount => 4,
            FeatureSet::Ved | FeatureSet::Count => 1,
            FeatureSet::VedAngle | FeatureSet::VedCount => 2,
        }
    }

    pub fn extract(self, r: &LayerFeatureRecord) -> Vec<f64> {
        let pvhs = [r.power, r.speed, r.hatch_space];
        match self {
            FeatureSet::Pvhs => pvhs.to_vec(),
            FeatureSet::PvhsAngle => vec![pvhs[0], pvhs[1], pvhs[2], r.hatch_angle],
            FeatureSet::PvhsCount => vec![pvhs[0], pvhs[1], pvhs[2], r.mean_spatter_count],
            FeatureSet::Ved => vec![r.ved],
            FeatureSet::VedAngle => vec![r.ved, r.hatch_angle],
            FeatureSet::Count => vec![r.mean_spatter_count],
            FeatureSet::VedCount => vec![r.ved, r.mean_spatter_count],
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub kkt_residual: f64,
    /// `Σ z β − ε Σ|β| − ½ βᵀKβ` at the solution (centred targets).
    pub dual_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub feature_set: Option<FeatureSet>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// Standardized training inputs.
    pub support: Vec<Vec<f64>>,
    /// `α⁺ − α⁻` per training point.
    pub dual: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub epsilon: f64,
    /// Resolved kernel width.
    pub gamma: f64,
    pub report: SolverReport,
}

pub fn epsilon_loss(y: f64, y_hat: f64, eps: f64) -> f64 {
    let e = math::abs(y - y_hat);
    if e <= eps {
        0.0
    } else {
        e - eps
    }
}

pub fn gaussian_kernel(u: &[f64], v: &[f64], gamma: f64) -> f64 {
    let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    math::exp(-gamma * d2)
}

fn standardize_fit(x: &[Vec<f64>], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() as f64;
    let mut means = vec![0.0; d];
    for row in x {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut scales = vec![0.0; d];
    for row in x {
        for ((s, v), m) in scales.iter_mut().zip(row).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    // constant columns (up to rounding of the mean) keep scale 1
    for (s, m) in scales.iter_mut().zip(&means) {
        let sd = math::sqrt(*s / n);
        *s = if sd > 1e-12 * math::abs(*m).max(1.0) { sd } else { 1.0 };
    }
    (means, scales)
}

fn standardize(row: &[f64], means: &[f64], scales: &[f64]) -> Vec<f64> {
    row.iter().zip(means).zip(scales).map(|((v, m), s)| (v - m) / s).collect()
}

pub fn train_svr(x: &[Vec<f64>], y: &[f64], hp: &SvrHyperparams) -> Result<SvrModel, SvrError> {
    train_svr_with(x, y, hp, &SolverOptions::default())
}

pub fn train_svr_with(x: &[Vec<f64>], y: &[f64], hp: &SvrHyperparams, opts: &SolverOptions) -> Result<SvrModel, SvrError> {
    hp.validate()?;
    if x.len() != y.len() {
        return Err(SvrError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n == 0 {
        return Err(SvrError::Empty);
    }
    let d = x[0].len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != d {
            return Err(SvrError::Dimension {
                row: i,
                expected: d,
                got: row.len(),
            });
        }
        if !row.iter().all(|v| v.is_finite()) || !y[i].is_finite() {
            return Err(SvrError::NonFinite(i));
        }
    }
    let gamma = hp.gamma.unwrap_or(1.0 / d.max(1) as f64);
    let (means, scales) = standardize_fit(x, d);
    let xs: Vec<Vec<f64>> = x.iter().map(|r| standardize(r, &means, &scales)).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = y.iter().map(|v| v - y_mean).collect();

    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = gaussian_kernel(&xs[i], &xs[j], gamma);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    let sol = solve_dual(&k, &z, hp.c, hp.epsilon, opts)?;
    Ok(SvrModel {
        feature_set: None,
        means,
        scales,
        support: xs,
        dual: sol.beta,
        bias: sol.bias + y_mean,
        c: hp.c,
        epsilon: hp.epsilon,
        gamma,
        report: sol.report,
    })
}

struct DualSolution {
    beta: Vec<f64>,
    bias: f64,
    report: SolverReport,
}

fn solve_dual(k: &[f64], z: &[f64], c: f64, eps: f64, opts: &SolverOptions) -> Result<DualSolution, SvrError> {
    let n = z.len();
    let l = 2 * n;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let kk = |s: usize, t: usize| k[(s % n) * n + (t % n)];
    let q = |s: usize, t: usize| sign(s) * sign(t) * kk(s, t);
    let p: Vec<f64> = (0..l).map(|t| if t < n { eps - z[t] } else { eps + z[t - n] }).collect();
    let mut alpha = vec![0.0; l];
    let mut grad = p.clone();

    let is_up = |a: f64, yt: f64| if yt > 0.0 { a < c } else { a > 0.0 };
    let is_low = |a: f64, yt: f64| if yt > 0.0 { a > 0.0 } else { a < c };
    let violation = |alpha: &[f64], grad: &[f64]| {
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax2 = f64::NEG_INFINITY;
        for t in 0..l {
            let yt = sign(t);
            if is_up(alpha[t], yt) {
                gmax = gmax.max(-yt * grad[t]);
            }
            if is_low(alpha[t], yt) {
                gmax2 = gmax2.max(yt * grad[t]);
            }
        }
        gmax + gmax2
    };

    let mut iterations = 0;
    loop {
        // i: maximal violating index in I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..l {
            let yt = sign(t);
            if is_up(alpha[t], yt) && (-yt * grad[t] > gmax || i == usize::MAX) {
                gmax = -yt * grad[t];
                i = t;
            }
        }
        // j: second-order choice in I_low
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..l {
            let yt = sign(t);
            if !is_low(alpha[t], yt) {
                continue;
            }
            gmax2 = gmax2.max(yt * grad[t]);
            if i == usize::MAX {
                continue;
            }
            let b = gmax + yt * grad[t];
            if b > 0.0 {
                let a = q(i, i) + q(t, t) - 2.0 * sign(i) * yt * q(i, t);
                let a = if a > 0.0 { a } else { 1e-12 };
                let obj = -(b * b) / a;
                if obj < best {
                    best = obj;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax + gmax2 < opts.tolerance {
            break;
        }
        if iterations >= opts.max_iterations {
            return Err(SvrError::NoConvergence {
                iterations,
                residual: gmax + gmax2,
            });
        }
        iterations += 1;

        let (ai_old, aj_old) = (alpha[i], alpha[j]);
        let (qii, qjj, qij) = (q(i, i), q(j, j), q(i, j));
        let (mut ai, mut aj) = (ai_old, aj_old);
        if sign(i) != sign(j) {
            let quad = (qii + qjj + 2.0 * qij).max(1e-12);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(1e-12);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (di, dj) = (ai - ai_old, aj - aj_old);
        for t in 0..l {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    // Fresh gradient so the reported residual is not an artefact of
    // accumulated updates.
    for t in 0..l {
        grad[t] = p[t] + (0..l).map(|s| q(t, s) * alpha[s]).sum::<f64>();
    }
    let kkt_residual = violation(&alpha, &grad).max(0.0);

    // Bias: average over free variables, else the midpoint of the
    // feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..l {
        let yt = sign(t);
        let yg = yt * grad[t];
        if alpha[t] >= c {
            if yt < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if yt > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            sum_free += yg;
            n_free += 1;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };
    let beta: Vec<f64> = (0..n).map(|i| alpha[i] - alpha[i + n]).collect();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += beta[i] * beta[j] * k[i * n + j];
        }
    }
    let dual_objective = beta.iter().zip(z).map(|(b, zi)| b * zi - eps * math::abs(*b)).sum::<f64>() - 0.5 * quad;
    Ok(DualSolution {
        beta,
        bias: -rho,
        report: SolverReport {
            iterations,
            kkt_residual,
            dual_objective,
        },
    })
}

impl SvrModel {
    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, SvrError> {
        if x.len() != self.dim() {
            return Err(SvrError::Dimension {
                row: 0,
                expected: self.dim(),
                got: x.len(),
            });
        }
        let u = standardize(x, &self.means, &self.scales);
        let s: f64 = self
            .support
            .iter()
            .zip(&self.dual)
            .filter(|(_, b)| **b != 0.0)
            .map(|(v, b)| b * gaussian_kernel(&u, v, self.gamma))
            .sum();
        Ok(s + self.bias)
    }

    /// Prediction for a record through the model's feature set. A model
    /// trained for another set, or on raw features, is an error.
    pub fn predict_record(&self, r: &LayerFeatureRecord, fs: FeatureSet) -> Result<f64, SvrError> {
        let own = self.feature_set.ok_or(SvrError::NoFeatureSet)?;
        if own != fs {
            return Err(SvrError::FeatureSetMismatch {
                expected: own.name().into(),
                got: fs.name().into(),
            });
        }
        self.predict(&fs.extract(r))
    }
}

pub fn train_feature_set(records: &[LayerFeatureRecord], fs: FeatureSet, hp: &SvrHyperparams) -> Result<SvrModel, SvrError> {
    let x: Vec<Vec<f64>> = records.iter().map(|r| fs.extract(r)).collect();
    let y: Vec<f64> = records.iter().map(|r| r.sa).collect();
    let mut m = train_svr(&x, &y, hp)?;
    m.feature_set = Some(fs);
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Protocol {
    #[default]
    LeaveOneOut,
    KFold { k: usize },
}

pub const MIN_COMPARE_RECORDS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub feature_set: FeatureSet,
    pub metrics: PredictionMetrics,
    /// Held-out prediction per record, in canonical record order.
    pub predictions: Vec<f64>,
}

fn canonical_order(records: &[LayerFeatureRecord]) -> Vec<LayerFeatureRecord> {
    let mut v = records.to_vec();
    v.sort_by(|a, b| {
        a.bar_id
            .cmp(&b.bar_id)
            .then(a.layer_index.cmp(&b.layer_index))
            .then(a.sa.total_cmp(&b.sa))
            .then(a.ved.total_cmp(&b.ved))
            .then(a.mean_spatter_count.total_cmp(&b.mean_spatter_count))
            .then(a.hatch_angle.total_cmp(&b.hatch_angle))
            .then(a.power.total_cmp(&b.power))
            .then(a.speed.total_cmp(&b.speed))
            .then(a.hatch_space.total_cmp(&b.hatch_space))
    });
    v
}

/// Checks a dataset for comparison and returns it in canonical order
/// (bar, layer, then field values), which makes results independent of
/// input order.
pub fn prepare_dataset(records: &[LayerFeatureRecord], protocol: Protocol) -> Result<Vec<LayerFeatureRecord>, SvrError> {
    if records.len() < MIN_COMPARE_RECORDS {
        return Err(SvrError::TooFewRecords {
            need: MIN_COMPARE_RECORDS,
            got: records.len(),
        });
    }
    for r in records {
        r.validate()?;
    }
    if let Protocol::KFold { k } = protocol {
        if k < 2 || k > records.len() {
            return Err(SvrError::Protocol("k must lie in [2, n]"));
        }
    }
    Ok(canonical_order(records))
}

/// Held-out predictions for one feature set. `records` must come from
/// [`prepare_dataset`].
pub fn compare_feature_set(
    records: &[LayerFeatureRecord],
    fs: FeatureSet,
    hp: &SvrHyperparams,
    protocol: Protocol,
) -> Result<ComparisonRow, SvrError> {
    let n = records.len();
    let k = match protocol {
        Protocol::LeaveOneOut => n,
        Protocol::KFold { k } => k,
    };
    let mut pred = vec![0.0; n];
    for fold in 0..k {
        let train: Vec<LayerFeatureRecord> = (0..n).filter(|i| i % k != fold).map(|i| records[i]).collect();
        let model = train_feature_set(&train, fs, hp)?;
        for i in (0..n).filter(|i| i % k == fold) {
            pred[i] = model.predict_record(&records[i], fs)?;
        }
    }
    let truth: Vec<f64> = records.iter().map(|r| r.sa).collect();
    Ok(ComparisonRow {
        feature_set: fs,
        metrics: prediction_metrics(&pred, &truth)?,
        predictions: pred,
    })
}

/// All seven feature sets, in table order.
pub fn compare_models(records: &[LayerFeatureRecord], hp: &SvrHyperparams, protocol: Protocol) -> Result<Vec<ComparisonRow>, SvrError> {
    hp.validate()?;
    let data = prepare_dataset(records, protocol)?;
    FeatureSet::ALL
        .iter()
        .map(|&fs| compare_feature_set(&data, fs, hp, protocol))
        .collect()
}
