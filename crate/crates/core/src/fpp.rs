//! Fringe projection profilometry.
//!
//! Intensity model for pattern `i` with phase shift `δ_i`:
//!
//! ```text
//! I_i(x, y) = A + B · cos(φ(x, y) + δ_i)
//! ```
//!
//! and the wrapped phase is recovered as
//! `φ = atan2(−Σ I_i sin δ_i, Σ I_i cos δ_i)`, which is exact for any
//! balanced schedule (`Σ sin δ_i = Σ cos δ_i = Σ sin 2δ_i = Σ cos 2δ_i = 0`).
//!
//! Heights are measured against a reference (flat powder bed) capture:
//! the phase difference object − reference is unwrapped spatially and
//! scaled by a calibrated μm/radian ratio. Heights below the reference
//! plane are negative.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{connected_components, Connectivity, Mask};
use crate::math;
use crate::rng::SplitMix64;

/// Default validity threshold on fringe modulation, in intensity levels.
pub const DEFAULT_MODULATION_THRESHOLD: f64 = 5.0;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FppError {
    #[error("phase-shift schedule needs at least 3 shifts, got {0}")]
    TooFewShifts(usize),
    #[error("stack has {frames} frames but schedule has {shifts} shifts")]
    StackLength { frames: usize, shifts: usize },
    #[error("frame {index} has {actual} pixels, expected {expected}")]
    FrameSize { index: usize, expected: usize, actual: usize },
    #[error("dimension mismatch: {a:?} vs {b:?}")]
    SizeMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("invalid parameter `{name}`: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("object and reference phase maps share no valid pixels")]
    NoValidOverlap,
    #[error("region has {0} valid pixels; at least 2 are required")]
    InsufficientPixels(usize),
    #[error("region {0:?} exceeds the map bounds")]
    RegionOutOfBounds(Region),
}

fn positive(name: &'static str, value: f64) -> Result<(), FppError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(FppError::InvalidParameter { name, value })
    }
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_to_pi(a: f64) -> f64 {
    let r = math::rem_euclid(a + PI, TWO_PI) - PI;
    if r <= -PI {
        r + TWO_PI
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseShiftSchedule {
    /// Phase shift of each pattern, radians.
    pub shifts: Vec<f64>,
}

impl Default for PhaseShiftSchedule {
    /// Three-step schedule `{0, 2π/3, 4π/3}`.
    fn default() -> Self {
        Self::uniform(3)
    }
}

impl PhaseShiftSchedule {
    /// `n` equally spaced shifts `2πi/n`.
    pub fn uniform(n: usize) -> Self {
        Self {
            shifts: (0..n).map(|i| TWO_PI * i as f64 / n as f64).collect(),
        }
    }

    pub fn new(shifts: Vec<f64>) -> Result<Self, FppError> {
        let s = Self { shifts };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), FppError> {
        if self.shifts.len() < 3 {
            return Err(FppError::TooFewShifts(self.shifts.len()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    /// True when `Σ sin δ` and `Σ cos δ` both vanish.
    pub fn is_balanced(&self) -> bool {
        let s: f64 = self.shifts.iter().map(|&d| math::sin(d)).sum();
        let c: f64 = self.shifts.iter().map(|&d| math::cos(d)).sum();
        math::abs(s) < 1e-12 && math::abs(c) < 1e-12
    }
}

/// Phase-shifted fringe captures of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct FringeStack {
    pub width: usize,
    pub height: usize,
    /// One row-major intensity plane (0–255 scale) per shift.
    pub frames: Vec<Vec<f64>>,
    pub schedule: PhaseShiftSchedule,
    /// Display/sensor gamma still present in `frames`; 1 once corrected.
    pub gamma: f64,
}

impl FringeStack {
    pub fn new(
        width: usize,
        height: usize,
        frames: Vec<Vec<f64>>,
        schedule: PhaseShiftSchedule,
        gamma: f64,
    ) -> Result<Self, FppError> {
        schedule.validate()?;
        positive("gamma", gamma)?;
        if frames.len() != schedule.len() {
            return Err(FppError::StackLength {
                frames: frames.len(),
                shifts: schedule.len(),
            });
        }
        for (index, f) in frames.iter().enumerate() {
            if f.len() != width * height {
                return Err(FppError::FrameSize {
                    index,
                    expected: width * height,
                    actual: f.len(),
                });
            }
        }
        Ok(Self {
            width,
            height,
            frames,
            schedule,
            gamma,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMap {
    pub width: usize,
    pub height: usize,
    /// Radians; wrapped maps lie in `(−π, π]`.
    pub phase: Vec<f64>,
    /// Fringe amplitude estimate, intensity levels.
    pub modulation: Vec<f64>,
    pub valid: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    pub width: usize,
    pub height: usize,
    /// Micrometres relative to the reference plane.
    pub heights: Vec<f64>,
    pub valid: Vec<bool>,
}

impl HeightMap {
    /// All-valid map from a function of pixel coordinates.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut heights = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                heights.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            heights,
            valid: vec![true; width * height],
        }
    }

    pub fn full_region(&self) -> Region {
        Region {
            x0: 0,
            y0: 0,
            width: self.width,
            height: self.height,
        }
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

/// Synthetic capture settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FringeSynthParams {
    pub schedule: PhaseShiftSchedule,
    /// Fringe period along x, pixels.
    pub period_px: f64,
    /// Height per radian of phase, μm/rad.
    pub k_h: f64,
    pub gamma: f64,
    /// Fringe offset `A`.
    pub bias: f64,
    /// Fringe amplitude `B`.
    pub amplitude: f64,
    /// Additive Gaussian noise after gamma, intensity levels.
    pub noise_sigma: f64,
    /// Round to integer levels, as an 8-bit camera would.
    pub quantize: bool,
    pub seed: u64,
}

impl Default for FringeSynthParams {
    fn default() -> Self {
        Self {
            schedule: PhaseShiftSchedule::default(),
            period_px: 16.0,
            k_h: 20.0,
            gamma: 2.2,
            bias: 128.0,
            amplitude: 100.0,
            noise_sigma: 0.0,
            quantize: false,
            seed: 0,
        }
    }
}

fn gamma_distort(v: f64, gamma: f64) -> f64 {
    255.0 * math::powf(v.clamp(0.0, 255.0) / 255.0, gamma)
}

/// Renders object and reference (flat, `h ≡ 0`) fringe stacks.
pub fn synth_fringes(truth: &HeightMap, p: &FringeSynthParams) -> Result<(FringeStack, FringeStack), FppError> {
    p.schedule.validate()?;
    if !(p.period_px > 2.0) {
        return Err(FppError::InvalidParameter {
            name: "period_px",
            value: p.period_px,
        });
    }
    positive("k_h", p.k_h)?;
    positive("gamma", p.gamma)?;
    let (w, h) = (truth.width, truth.height);
    let render = |with_height: bool, stream: u64| {
        p.schedule
            .shifts
            .iter()
            .enumerate()
            .map(|(i, &delta)| {
                let mut rng = SplitMix64::derive(p.seed, stream * 64 + i as u64);
                let mut plane = Vec::with_capacity(w * h);
                for y in 0..h {
                    for x in 0..w {
                        let idx = y * w + x;
                        let hv = if with_height && truth.valid[idx] { truth.heights[idx] } else { 0.0 };
                        let phase = TWO_PI * x as f64 / p.period_px + hv / p.k_h + delta;
                        let mut v = gamma_distort(p.bias + p.amplitude * math::cos(phase), p.gamma);
                        if p.noise_sigma > 0.0 {
                            v = (v + rng.gaussian(0.0, p.noise_sigma)).clamp(0.0, 255.0);
                        }
                        if p.quantize {
                            v = math::round(v);
                        }
                        plane.push(v);
                    }
                }
                plane
            })
            .collect::<Vec<_>>()
    };
    let obj = FringeStack::new(w, h, render(true, 1), p.schedule.clone(), p.gamma)?;
    let reference = FringeStack::new(w, h, render(false, 2), p.schedule.clone(), p.gamma)?;
    Ok((obj, reference))
}

/// Inverts the sensor gamma: `I' = 255 · (I / 255)^(1/γ)`.
pub fn gamma_correct(stack: &FringeStack) -> FringeStack {
    let inv = 1.0 / stack.gamma;
    let frames = stack
        .frames
        .iter()
        .map(|f| f.iter().map(|&v| 255.0 * math::powf(v.clamp(0.0, 255.0) / 255.0, inv)).collect())
        .collect();
    FringeStack {
        frames,
        gamma: 1.0,
        ..stack.clone()
    }
}

/// Per-pixel wrapped phase and modulation.
pub fn wrap_phase(stack: &FringeStack, modulation_threshold: f64) -> PhaseMap {
    let n = stack.schedule.len();
    let sc: Vec<(f64, f64)> = stack.schedule.shifts.iter().map(|&d| (math::sin(d), math::cos(d))).collect();
    let npx = stack.width * stack.height;
    let mut phase = Vec::with_capacity(npx);
    let mut modulation = Vec::with_capacity(npx);
    let mut valid = Vec::with_capacity(npx);
    for idx in 0..npx {
        let (mut s, mut c) = (0.0, 0.0);
        for (f, &(sd, cd)) in stack.frames.iter().zip(sc.iter()) {
            s += f[idx] * sd;
            c += f[idx] * cd;
        }
        let mut phi = math::atan2(-s, c);
        if phi <= -PI {
            phi = PI;
        }
        let m = 2.0 / n as f64 * math::hypot(s, c);
        phase.push(phi);
        modulation.push(m);
        valid.push(m >= modulation_threshold);
    }
    PhaseMap {
        width: stack.width,
        height: stack.height,
        phase,
        modulation,
        valid,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UnwrapDiagnostics {
    /// Pixels reached only across a phase step of ±π; left invalid.
    pub ambiguous: Vec<usize>,
    /// Connected valid regions unwrapped independently.
    pub regions: usize,
    /// Multiple of 2π removed from each region (largest region first).
    pub offsets: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unwrapped {
    pub phase: PhaseMap,
    pub diagnostics: UnwrapDiagnostics,
}

const AMBIGUITY_TOL: f64 = 1e-9;

/// Reference-guided unwrapping.
///
/// The object−reference difference is wrapped per pixel, then unwrapped by
/// breadth-first flood fill over 4-connected valid pixels, starting from
/// the first raster pixel of each region (largest region first). Each
/// region is shifted by the multiple of 2π that puts its median in
/// `(−π, π]`.
pub fn unwrap_reference(obj: &PhaseMap, reference: &PhaseMap) -> Result<Unwrapped, FppError> {
    if (obj.width, obj.height) != (reference.width, reference.height) {
        return Err(FppError::SizeMismatch {
            a: (obj.width, obj.height),
            b: (reference.width, reference.height),
        });
    }
    let (w, h) = (obj.width, obj.height);
    let valid: Vec<bool> = obj.valid.iter().zip(reference.valid.iter()).map(|(a, b)| *a && *b).collect();
    if !valid.iter().any(|&v| v) {
        return Err(FppError::NoValidOverlap);
    }
    let delta: Vec<f64> = obj
        .phase
        .iter()
        .zip(reference.phase.iter())
        .map(|(a, b)| wrap_to_pi(a - b))
        .collect();

    let comps = connected_components(
        &Mask {
            width: w,
            height: h,
            bits: valid.clone(),
        },
        Connectivity::Four,
    );
    let mut order: Vec<usize> = (0..comps.components.len()).collect();
    order.sort_by(|&a, &b| comps.components[b].area.cmp(&comps.components[a].area).then(a.cmp(&b)));

    let mut out = vec![0.0; w * h];
    let mut done = vec![false; w * h];
    let mut diag = UnwrapDiagnostics {
        regions: order.len(),
        ..Default::default()
    };
    let mut queue = VecDeque::new();
    let mut touched = Vec::new();
    for &ci in &order {
        let (sx, sy) = comps.components[ci].first_pixel;
        let seed = sy * w + sx;
        out[seed] = delta[seed];
        done[seed] = true;
        queue.push_back(seed);
        touched.clear();
        touched.push(seed);
        while let Some(cur) = queue.pop_front() {
            let (cx, cy) = (cur % w, cur / w);
            for &(dx, dy) in Connectivity::Four.offsets() {
                let nx = cx as isize + dx;
                let ny = cy as isize + dy;
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let n = ny as usize * w + nx as usize;
                if !valid[n] || done[n] {
                    continue;
                }
                let step = wrap_to_pi(delta[n] - delta[cur]);
                if math::abs(step) >= PI - AMBIGUITY_TOL {
                    continue;
                }
                out[n] = out[cur] + step;
                done[n] = true;
                touched.push(n);
                queue.push_back(n);
            }
        }
        let mut vals: Vec<f64> = touched.iter().map(|&i| out[i]).collect();
        vals.sort_by(f64::total_cmp);
        let m = vals.len();
        let median = if m % 2 == 1 {
            vals[m / 2]
        } else {
            0.5 * (vals[m / 2 - 1] + vals[m / 2])
        };
        let k = math::round(median / TWO_PI) as i64;
        // keep the median inside (−π, π]
        let k = if median - TWO_PI * k as f64 <= -PI { k - 1 } else { k };
        if k != 0 {
            for &i in &touched {
                out[i] -= TWO_PI * k as f64;
            }
        }
        diag.offsets.push(k);
    }
    let mut out_valid = valid;
    for i in 0..w * h {
        if out_valid[i] && !done[i] {
            out_valid[i] = false;
            diag.ambiguous.push(i);
        }
    }
    for i in 0..w * h {
        if !out_valid[i] {
            out[i] = 0.0;
        }
    }
    let modulation = obj
        .modulation
        .iter()
        .zip(reference.modulation.iter())
        .map(|(a, b)| a.min(*b))
        .collect();
    Ok(Unwrapped {
        phase: PhaseMap {
            width: w,
            height: h,
            phase: out,
            modulation,
            valid: out_valid,
        },
        diagnostics: diag,
    })
}

/// `h = k_h · Δφ` on valid pixels.
pub fn phase_to_height(dphase: &PhaseMap, k_h: f64) -> Result<HeightMap, FppError> {
    positive("k_h", k_h)?;
    let heights = dphase
        .phase
        .iter()
        .zip(dphase.valid.iter())
        .map(|(&p, &v)| if v { k_h * p } else { 0.0 })
        .collect();
    Ok(HeightMap {
        width: dphase.width,
        height: dphase.height,
        heights,
        valid: dphase.valid.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoughnessResult {
    /// Arithmetic mean absolute deviation from the regional mean, μm.
    pub sa: f64,
    pub region: Region,
    pub n_valid: usize,
    /// Population standard deviation of the deviation, μm.
    pub z_std: f64,
    /// Regional mean height, μm.
    pub mean: f64,
}

/// Areal roughness `Sa` over the valid pixels of a region.
pub fn compute_sa(h: &HeightMap, region: Region) -> Result<RoughnessResult, FppError> {
    if region.x0 + region.width > h.width || region.y0 + region.height > h.height {
        return Err(FppError::RegionOutOfBounds(region));
    }
    let mut vals = Vec::new();
    for y in region.y0..region.y0 + region.height {
        for x in region.x0..region.x0 + region.width {
            let i = y * h.width + x;
            if h.valid[i] {
                vals.push(h.heights[i]);
            }
        }
    }
    if vals.len() < 2 {
        return Err(FppError::InsufficientPixels(vals.len()));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let sa = vals.iter().map(|v| math::abs(v - mean)).sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(RoughnessResult {
        sa,
        region,
        n_valid: vals.len(),
        z_std: math::sqrt(var),
        mean,
    })
}
