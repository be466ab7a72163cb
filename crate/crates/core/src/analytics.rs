//! Descriptive statistics over per-layer features.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::process::{compute_ved, ProcessParameters};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("need at least {need} samples, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("x values are all equal; slope undefined")]
    DegenerateX,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("record bar {bar_id} layer {layer_index}: VED {ved} disagrees with process parameters ({expected})")]
    InconsistentVed {
        bar_id: u32,
        layer_index: u32,
        ved: f64,
        expected: f64,
    },
    #[error("record bar {bar_id} layer {layer_index}: {reason}")]
    InvalidRecord {
        bar_id: u32,
        layer_index: u32,
        reason: &'static str,
    },
}

/// Relative tolerance between a stored VED and the one recomputed from
/// process parameters.
pub const VED_TOLERANCE: f64 = 5e-3;

/// One (bar, layer) sample: process settings, monitored signatures and
/// measured roughness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerFeatureRecord {
    pub bar_id: u32,
    pub layer_index: u32,
    /// W
    pub power: f64,
    /// mm/s
    pub speed: f64,
    /// mm
    pub hatch_space: f64,
    /// mm
    pub layer_thickness: f64,
    /// J/mm³
    pub ved: f64,
    /// Degrees in `[0, 180)`.
    pub hatch_angle: f64,
    pub mean_spatter_count: f64,
    /// μm
    pub sa: f64,
    /// Standard deviation of the height deviation, μm.
    pub z_std: f64,
}

impl LayerFeatureRecord {
    pub fn process(&self) -> ProcessParameters {
        ProcessParameters::new(self.power, self.speed, self.hatch_space, self.layer_thickness)
    }

    pub fn validate(&self) -> Result<(), AnalyticsError> {
        let fields = [
            self.power,
            self.speed,
            self.hatch_space,
            self.layer_thickness,
            self.ved,
            self.hatch_angle,
            self.mean_spatter_count,
            self.sa,
            self.z_std,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(AnalyticsError::InvalidRecord {
                bar_id: self.bar_id,
                layer_index: self.layer_index,
                reason: "non-finite field",
            });
        }
        let expected = compute_ved(&self.process()).map_err(|_| AnalyticsError::InvalidRecord {
            bar_id: self.bar_id,
            layer_index: self.layer_index,
            reason: "invalid process parameters",
        })?;
        if math::abs(self.ved - expected) > VED_TOLERANCE * math::abs(expected) {
            return Err(AnalyticsError::InconsistentVed {
                bar_id: self.bar_id,
                layer_index: self.layer_index,
                ved: self.ved,
                expected,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Ordinary least squares `y = slope·x + intercept` from centred normal
/// equations; `R² = 1 − SS_res / SS_tot` (1 when `y` is constant and the
/// fit is exact).
pub fn linfit(x: &[f64], y: &[f64]) -> Result<LinearFit, AnalyticsError> {
    if x.len() != y.len() {
        return Err(AnalyticsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(AnalyticsError::TooFew { need: 2, got: n });
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if !(sxx > 0.0) {
        return Err(AnalyticsError::DegenerateX);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (slope * a + intercept);
            r * r
        })
        .sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub rmse: f64,
    pub mae: f64,
    /// Mean relative error in percent; `None` when any truth value is 0.
    pub mre_percent: Option<f64>,
}

pub fn prediction_metrics(pred: &[f64], truth: &[f64]) -> Result<PredictionMetrics, AnalyticsError> {
    if pred.len() != truth.len() {
        return Err(AnalyticsError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(AnalyticsError::TooFew { need: 1, got: 0 });
    }
    let n = pred.len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut re = 0.0;
    let mut zero_truth = false;
    for (&p, &t) in pred.iter().zip(truth) {
        let e = p - t;
        se += e * e;
        ae += math::abs(e);
        if t == 0.0 {
            zero_truth = true;
        } else {
            re += math::abs(e) / math::abs(t);
        }
    }
    Ok(PredictionMetrics {
        rmse: math::sqrt(se / n),
        mae: ae / n,
        mre_percent: (!zero_truth).then(|| 100.0 * re / n),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimePoint {
    pub bar_id: u32,
    pub ved: f64,
    pub sa: f64,
    pub z_std: f64,
}

/// Roughness against energy density, sorted by VED (ties by bar id).
pub fn regime_curve(records: &[LayerFeatureRecord]) -> Vec<RegimePoint> {
    let mut pts: Vec<RegimePoint> = records
        .iter()
        .map(|r| RegimePoint {
            bar_id: r.bar_id,
            ved: r.ved,
            sa: r.sa,
            z_std: r.z_std,
        })
        .collect();
    pts.sort_by(|a, b| a.ved.total_cmp(&b.ved).then(a.bar_id.cmp(&b.bar_id)));
    pts
}
