//! Process parameters, lumped energy densities and the hatch-angle schedule.
//!
//! Internal units are W, mm/s, mm, J/mm² and J/mm³. Angles are in degrees.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;

/// Default per-layer hatch rotation in degrees.
pub const DEFAULT_HATCH_ROTATION_DEG: f64 = 67.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProcessError {
    #[error("invalid process parameter `{name}`: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

/// Laser scan settings of one build region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessParameters {
    /// Laser power in W.
    pub power: f64,
    /// Scan speed in mm/s.
    pub scan_speed: f64,
    /// Hatch spacing in mm.
    pub hatch_space: f64,
    /// Nominal layer thickness in mm.
    pub layer_thickness: f64,
}

impl ProcessParameters {
    pub fn new(power: f64, scan_speed: f64, hatch_space: f64, layer_thickness: f64) -> Self {
        Self {
            power,
            scan_speed,
            hatch_space,
            layer_thickness,
        }
    }

    /// Builds parameters from machine-sheet units: W, m/s, μm, μm.
    pub fn from_machine_units(power_w: f64, speed_m_s: f64, hatch_um: f64, thickness_um: f64) -> Self {
        Self::new(power_w, speed_m_s * 1000.0, hatch_um / 1000.0, thickness_um / 1000.0)
    }

    pub fn validate(&self) -> Result<(), ProcessError> {
        check_scan(self)?;
        positive("layer_thickness", self.layer_thickness)
    }

    pub fn energy_densities(&self) -> Result<EnergyDensities, ProcessError> {
        Ok(EnergyDensities {
            sed: compute_sed(self)?,
            ved: compute_ved(self)?,
        })
    }
}

/// Surface (J/mm²) and volumetric (J/mm³) energy density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyDensities {
    pub sed: f64,
    pub ved: f64,
}

fn positive(name: &'static str, value: f64) -> Result<(), ProcessError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ProcessError::InvalidParameter { name, value })
    }
}

fn check_scan(p: &ProcessParameters) -> Result<(), ProcessError> {
    if !(p.power.is_finite() && p.power >= 0.0) {
        return Err(ProcessError::InvalidParameter {
            name: "power",
            value: p.power,
        });
    }
    positive("scan_speed", p.scan_speed)?;
    positive("hatch_space", p.hatch_space)
}

/// Surface energy density `P / (V · HS)` in J/mm².
pub fn compute_sed(p: &ProcessParameters) -> Result<f64, ProcessError> {
    check_scan(p)?;
    Ok(p.power / (p.scan_speed * p.hatch_space))
}

/// Volumetric energy density `P / (V · HS · t)` in J/mm³.
pub fn compute_ved(p: &ProcessParameters) -> Result<f64, ProcessError> {
    let sed = compute_sed(p)?;
    positive("layer_thickness", p.layer_thickness)?;
    Ok(sed / p.layer_thickness)
}

/// Folds an angle onto `[0, 180)`. Scan vectors 180° apart draw the same
/// hatch pattern.
pub fn normalize_hatch_angle(angle_deg: f64) -> f64 {
    math::rem_euclid(angle_deg, 180.0)
}

/// Hatch direction that rotates by a fixed step every layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HatchSchedule {
    /// Scan angle of layer 0, degrees.
    pub base_angle: f64,
    /// Rotation added per layer, degrees.
    pub rotation_per_layer: f64,
}

impl Default for HatchSchedule {
    fn default() -> Self {
        Self {
            base_angle: 0.0,
            rotation_per_layer: DEFAULT_HATCH_ROTATION_DEG,
        }
    }
}

impl HatchSchedule {
    pub fn new(base_angle: f64, rotation_per_layer: f64) -> Self {
        Self {
            base_angle: math::rem_euclid(base_angle, 360.0),
            rotation_per_layer,
        }
    }

    /// Schedule whose layer `layer_index` has scan angle `angle_deg`.
    pub fn anchored(angle_deg: f64, layer_index: u32, rotation_per_layer: f64) -> Self {
        Self::new(angle_deg - rotation_per_layer * f64::from(layer_index), rotation_per_layer)
    }

    /// Unfolded scan angle in `[0, 360)`.
    pub fn scan_angle(&self, layer_index: u32) -> f64 {
        math::rem_euclid(
            self.base_angle + self.rotation_per_layer * f64::from(layer_index),
            360.0,
        )
    }
}

/// Hatch angle of a layer, folded onto `[0, 180)`.
pub fn hatch_angle_for_layer(s: &HatchSchedule, layer_index: u32) -> f64 {
    normalize_hatch_angle(s.scan_angle(layer_index))
}
