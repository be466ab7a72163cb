//! Seeded scene simulator: off-axis monitoring frames with exact labels,
//! serpentine layer sequences and per-layer feature datasets.
//!
//! Every output is a pure function of its spec. Randomness comes from
//! [`SplitMix64`] streams, and all floating point goes through `libm`, so
//! frames are byte-identical across platforms.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::LayerFeatureRecord;
use crate::fpp::HeightMap;
use crate::imaging::{Frame, FrameMeta, Homography};
use crate::math;
use crate::process::{compute_ved, normalize_hatch_angle, HatchSchedule, ProcessError, ProcessParameters};
use crate::registration::{ejection_angle, DbscanParams};
use crate::rng::SplitMix64;
use crate::segmentation::{Class, LabelMap};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid scene parameter `{name}`: {reason}")]
    InvalidSpec { name: &'static str, reason: &'static str },
    #[error("could not place {wanted} spatters within {attempts} attempts (placed {placed})")]
    SceneInfeasible {
        wanted: usize,
        placed: usize,
        attempts: usize,
    },
    #[error(transparent)]
    Process(#[from] ProcessError),
}

/// Vertical column of reflection spots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlareSpec {
    pub column_x: f64,
    /// Centre row of the first spot.
    pub start_y: f64,
    pub spot_count: usize,
    pub spot_spacing: f64,
    pub spot_intensity: u8,
    #[serde(default = "default_flare_radius")]
    pub spot_radius: f64,
}

fn default_flare_radius() -> f64 {
    1.5
}

impl FlareSpec {
    pub fn spot_centers(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.spot_count).map(move |i| [self.column_x, self.start_y + i as f64 * self.spot_spacing])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub image_size: [usize; 2],
    pub mp_center: [f64; 2],
    pub mp_radius: f64,
    pub mp_peak_intensity: u8,
    /// Degrees, image axes (x right, y down).
    pub scan_direction: f64,
    pub spatter_count: usize,
    /// `(mean, spread)` in degrees relative to the scan direction; angles
    /// are uniform in `[mean − spread, mean + spread]`.
    pub spatter_angle_distribution: [f64; 2],
    /// Distance in pixels between the MP support and the nearest spatter
    /// edge is drawn from `[min_gap, min_gap + spatter_reach]`.
    pub spatter_reach: f64,
    pub spatter_radius_range: [f64; 2],
    pub spatter_intensity_range: [u8; 2],
    pub flare: Option<FlareSpec>,
    pub background_level: f64,
    pub background_noise_sigma: f64,
    /// DBSCAN radius the separation guarantee is built for.
    pub eps: f64,
    /// Horizontal tolerance used by flare suppression; spatters are kept
    /// out of vertical alignments this tight.
    pub flare_tol_x: f64,
    pub rng_seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            image_size: [256, 256],
            mp_center: [128.0, 128.0],
            mp_radius: 8.0,
            mp_peak_intensity: 255,
            scan_direction: 0.0,
            spatter_count: 0,
            spatter_angle_distribution: [180.0, 90.0],
            spatter_reach: 60.0,
            spatter_radius_range: [1.5, 3.0],
            spatter_intensity_range: [100, 180],
            flare: None,
            background_level: 16.0,
            background_noise_sigma: 2.0,
            eps: DbscanParams::default().eps,
            flare_tol_x: 1.5,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Centroid of the rendered MP support.
    pub mp_center: [f64; 2],
    pub spatter_centroids: Vec<[f64; 2]>,
    pub spatter_count: usize,
    pub ejection_angles: Vec<f64>,
    /// Centres of rendered flare spots. They are labeled background.
    #[serde(default)]
    pub flare_spots: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub frame: Frame,
    pub labels: LabelMap,
    pub truth: GroundTruth,
}

struct Disk {
    c: [f64; 2],
    r: f64,
}

fn invalid(name: &'static str, reason: &'static str) -> SynthError {
    SynthError::InvalidSpec { name, reason }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let [w, h] = self.image_size;
        if w == 0 || h == 0 {
            return Err(invalid("image_size", "must be non-zero"));
        }
        if !(self.mp_radius >= 1.0) {
            return Err(invalid("mp_radius", "must be at least 1 pixel"));
        }
        let [cx, cy] = self.mp_center;
        if !(cx - self.mp_radius >= 0.0
            && cy - self.mp_radius >= 0.0
            && cx + self.mp_radius <= (w - 1) as f64
            && cy + self.mp_radius <= (h - 1) as f64)
        {
            return Err(invalid("mp_center", "melt pool must lie inside the image"));
        }
        let [r0, r1] = self.spatter_radius_range;
        if !(r0 >= 1.0 && r1 >= r0 && r1.is_finite()) {
            return Err(invalid("spatter_radius_range", "need 1 <= min <= max"));
        }
        let [i0, i1] = self.spatter_intensity_range;
        if i0 > i1 {
            return Err(invalid("spatter_intensity_range", "min exceeds max"));
        }
        if !(self.spatter_reach >= 0.0 && self.spatter_reach.is_finite()) {
            return Err(invalid("spatter_reach", "must be finite and non-negative"));
        }
        let [_, spread] = self.spatter_angle_distribution;
        if !(0.0..=180.0).contains(&spread) || !self.spatter_angle_distribution[0].is_finite() {
            return Err(invalid("spatter_angle_distribution", "spread must lie in [0, 180]"));
        }
        if !(self.background_noise_sigma >= 0.0 && self.background_noise_sigma.is_finite()) {
            return Err(invalid("background_noise_sigma", "must be finite and non-negative"));
        }
        if !self.background_level.is_finite() || !self.scan_direction.is_finite() {
            return Err(invalid("background_level", "must be finite"));
        }
        if !(self.eps > 0.0) || !(self.flare_tol_x >= 0.0) {
            return Err(invalid("eps", "eps must be positive and flare_tol_x non-negative"));
        }
        if let Some(f) = &self.flare {
            if !(f.spot_radius > 0.0 && f.spot_spacing >= 0.0 && f.column_x.is_finite() && f.start_y.is_finite()) {
                return Err(invalid("flare", "spot radius must be positive and positions finite"));
            }
        }
        Ok(())
    }

    fn min_gap(&self) -> f64 {
        2.0 * self.eps + 1.0
    }
}

fn disk_pixels(d: &Disk, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    let x0 = math::floor(d.c[0] - d.r).max(0.0) as usize;
    let y0 = math::floor(d.c[1] - d.r).max(0.0) as usize;
    let x1 = (math::floor(d.c[0] + d.r) as usize).min(w - 1);
    let y1 = (math::floor(d.c[1] + d.r) as usize).min(h - 1);
    (y0..=y1)
        .flat_map(move |y| (x0..=x1).map(move |x| (x, y)))
        .filter(move |&(x, y)| {
            let dx = x as f64 - d.c[0];
            let dy = y as f64 - d.c[1];
            dx * dx + dy * dy <= d.r * d.r
        })
}

fn centroid(px: impl Iterator<Item = (usize, usize)>) -> Option<[f64; 2]> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (x, y) in px {
        sx += x as f64;
        sy += y as f64;
        n += 1;
    }
    (n > 0).then(|| [sx / n as f64, sy / n as f64])
}

fn clamp_u8(v: f64) -> u8 {
    math::round(v).clamp(0.0, 255.0) as u8
}

/// Renders one frame.
///
/// Intensities are background noise plus a Gaussian MP blob (σ = r/3,
/// clipped at r), uniform spatter disks and the flare column. Spatter
/// centres are rejection sampled so that every spatter edge is more than
/// `2·eps` from the MP support, from other spatters and from flare spots,
/// and so that no three components share a column within the flare
/// tolerance. The attempt budget is `10·spatter_count` in total.
pub fn synth_frame(spec: &SceneSpec) -> Result<SynthScene, SynthError> {
    spec.validate()?;
    let [w, h] = spec.image_size;
    let mut rng = SplitMix64::new(spec.rng_seed);
    let gap = spec.min_gap();
    let mp = Disk {
        c: spec.mp_center,
        r: spec.mp_radius,
    };
    let flare_spots: Vec<Disk> = spec
        .flare
        .iter()
        .flat_map(|f| f.spot_centers().map(move |c| Disk { c, r: f.spot_radius }))
        .collect();
    // centroid x of each spot and spatter, for the alignment guard
    let guard = spec.flare_tol_x + 1.0;
    let flare_x: Vec<f64> = flare_spots
        .iter()
        .filter_map(|d| centroid(disk_pixels(d, w, h)).map(|c| c[0]))
        .collect();

    let mut spatters: Vec<(Disk, [f64; 2])> = Vec::with_capacity(spec.spatter_count);
    let budget = 10 * spec.spatter_count;
    let mut attempts = 0;
    let [mean_a, spread] = spec.spatter_angle_distribution;
    let [r0, r1] = spec.spatter_radius_range;
    while spatters.len() < spec.spatter_count {
        if attempts == budget {
            return Err(SynthError::SceneInfeasible {
                wanted: spec.spatter_count,
                placed: spatters.len(),
                attempts,
            });
        }
        attempts += 1;
        let r = rng.uniform(r0, r1);
        let a = math::deg_to_rad(spec.scan_direction + rng.uniform(mean_a - spread, mean_a + spread));
        let d = mp.r + r + gap + rng.uniform(0.0, spec.spatter_reach);
        let c = [mp.c[0] + d * math::cos(a), mp.c[1] + d * math::sin(a)];
        if c[0] - r < 0.0 || c[1] - r < 0.0 || c[0] + r > (w - 1) as f64 || c[1] + r > (h - 1) as f64 {
            continue;
        }
        let cand = Disk { c, r };
        let far = |o: &Disk| math::hypot(o.c[0] - c[0], o.c[1] - c[1]) >= o.r + r + gap;
        if !spatters.iter().all(|(o, _)| far(o)) || !flare_spots.iter().all(far) {
            continue;
        }
        let Some(cc) = centroid(disk_pixels(&cand, w, h)) else {
            continue;
        };
        if flare_x.iter().any(|&fx| math::abs(fx - cc[0]) <= guard) {
            continue;
        }
        let near: Vec<usize> = (0..spatters.len())
            .filter(|&j| math::abs(spatters[j].1[0] - cc[0]) <= guard)
            .collect();
        let crowded = near.len() >= 2
            || near.iter().any(|&j| {
                let xj = spatters[j].1[0];
                spatters.iter().enumerate().any(|(k, s)| k != j && math::abs(s.1[0] - xj) <= guard)
            });
        if crowded {
            continue;
        }
        spatters.push((cand, cc));
    }

    // Rendering draws noise in raster order from a separate stream so the
    // placement draws never shift it.
    let mut noise = SplitMix64::derive(spec.rng_seed, 1);
    let sigma_mp = mp.r / 3.0;
    let mut img = vec![0.0f64; w * h];
    let mut cls = vec![Class::Background; w * h];
    for y in 0..h {
        for x in 0..w {
            img[y * w + x] = spec.background_level;
        }
    }
    for (x, y) in disk_pixels(&mp, w, h) {
        let dx = x as f64 - mp.c[0];
        let dy = y as f64 - mp.c[1];
        let g = math::exp(-(dx * dx + dy * dy) / (2.0 * sigma_mp * sigma_mp));
        let i = y * w + x;
        img[i] = img[i].max(spec.background_level + (spec.mp_peak_intensity as f64 - spec.background_level) * g);
        cls[i] = Class::MeltPool;
    }
    if let Some(f) = &spec.flare {
        for d in &flare_spots {
            for (x, y) in disk_pixels(d, w, h) {
                let i = y * w + x;
                if cls[i] == Class::Background {
                    img[i] = img[i].max(f.spot_intensity as f64);
                }
            }
        }
    }
    let [i0, i1] = spec.spatter_intensity_range;
    for (d, _) in &spatters {
        let v = rng.uniform_int(i0 as i64, i1 as i64) as f64;
        for (x, y) in disk_pixels(d, w, h) {
            img[y * w + x] = v;
            cls[y * w + x] = Class::Spatter;
        }
    }
    let pixels: Vec<u8> = if spec.background_noise_sigma > 0.0 {
        img.iter().map(|&v| clamp_u8(v + noise.gaussian(0.0, spec.background_noise_sigma))).collect()
    } else {
        img.iter().map(|&v| clamp_u8(v)).collect()
    };

    let mp_center = centroid(disk_pixels(&mp, w, h)).unwrap_or(mp.c);
    let spatter_centroids: Vec<[f64; 2]> = spatters.iter().map(|s| s.1).collect();
    let ejection_angles = spatter_centroids
        .iter()
        .map(|&c| ejection_angle(mp_center, c, spec.scan_direction).unwrap_or(0.0))
        .collect();
    let frame = Frame {
        width: w,
        height: h,
        pixels,
        meta: FrameMeta::default(),
    };
    Ok(SynthScene {
        frame,
        labels: LabelMap::from_classes(w, h, cls),
        truth: GroundTruth {
            mp_center,
            spatter_count: spatter_centroids.len(),
            spatter_centroids,
            ejection_angles,
            flare_spots: flare_spots.iter().map(|d| d.c).collect(),
        },
    })
}

/// Mean spatters per melt pool as a function of process settings:
///
/// ```text
/// μ = power_coef·P + intercept + speed_coef·(V − ref_speed)
///     + angle_coef·(g(θ) − g(ref_angle)),   g(θ) = (1 + cos 2(θ − angle_peak)) / 2
/// count = round(max(0, μ + noise_sigma·N(0, 1)))
/// ```
///
/// P in W, V in m/s, θ the hatch angle in degrees. The defaults fit the
/// power and speed sweeps at a 74° hatch (1.4–4.1 spatters from 200 to
/// 350 W, 3.0–1.0 from 0.5 to 1.0 m/s) and peak near 140°.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CountModel {
    pub power_coef: f64,
    pub intercept: f64,
    pub speed_coef: f64,
    pub ref_speed: f64,
    pub angle_coef: f64,
    pub angle_peak: f64,
    pub ref_angle: f64,
    pub noise_sigma: f64,
}

impl Default for CountModel {
    fn default() -> Self {
        Self {
            power_coef: 0.0188,
            intercept: -2.32,
            speed_coef: -4.0,
            ref_speed: 1.0,
            angle_coef: 2.0,
            angle_peak: 139.0,
            ref_angle: 74.0,
            noise_sigma: 1.0,
        }
    }
}

impl CountModel {
    fn angle_gain(&self, theta: f64) -> f64 {
        (1.0 + math::cos(2.0 * math::deg_to_rad(theta - self.angle_peak))) / 2.0
    }

    /// `power` in W, `speed_m_s` in m/s, `hatch_angle` in degrees.
    pub fn mean(&self, power: f64, speed_m_s: f64, hatch_angle: f64) -> f64 {
        self.power_coef * power
            + self.intercept
            + self.speed_coef * (speed_m_s - self.ref_speed)
            + self.angle_coef * (self.angle_gain(hatch_angle) - self.angle_gain(self.ref_angle))
    }

    pub fn draw(&self, mean: f64, rng: &mut SplitMix64) -> usize {
        let v = mean + self.noise_sigma * rng.normal();
        math::round(v.max(0.0)) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSceneSpec {
    pub process: ProcessParameters,
    /// Scan vector angle in degrees; alternate lines run at `+180°`.
    pub hatch_angle: f64,
    /// Scan area `[x0, y0, x1, y1]` in plate millimetres.
    pub region_mm: [f64; 4],
    #[serde(default = "default_fps")]
    pub frame_rate: f64,
    #[serde(default = "default_ppmm")]
    pub pixels_per_mm: f64,
    /// Image, MP, spatter and flare settings shared by every frame.
    /// `mp_center`, `scan_direction`, `spatter_count` and `rng_seed` are
    /// overwritten per frame.
    #[serde(default)]
    pub template: SceneSpec,
    #[serde(default)]
    pub count_model: CountModel,
    #[serde(default)]
    pub seed: u64,
}

fn default_fps() -> f64 {
    1000.0
}

fn default_ppmm() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFrame {
    pub frame_index: u64,
    pub scene: SynthScene,
    pub mp_plate_position: [f64; 2],
    pub scan_direction: f64,
}

/// Sample points of a serpentine hatch over the region: positions in mm
/// and the scan direction of each.
pub fn serpentine_path(spec: &LayerSceneSpec) -> Result<Vec<([f64; 2], f64)>, SynthError> {
    spec.process.validate()?;
    let [x0, y0, x1, y1] = spec.region_mm;
    if !spec.region_mm.iter().all(|v| v.is_finite()) || x1 < x0 || y1 < y0 {
        return Err(invalid("region_mm", "need finite x0 <= x1 and y0 <= y1"));
    }
    if !(spec.frame_rate > 0.0 && spec.frame_rate.is_finite()) || !spec.hatch_angle.is_finite() {
        return Err(invalid("frame_rate", "must be positive"));
    }
    if x1 == x0 || y1 == y0 {
        return Ok(Vec::new());
    }
    let th = math::deg_to_rad(spec.hatch_angle);
    let u = [math::cos(th), math::sin(th)];
    let nrm = [-u[1], u[0]];
    let corners = [[x0, y0], [x1, y0], [x0, y1], [x1, y1]];
    let proj = |p: [f64; 2], v: [f64; 2]| p[0] * v[0] + p[1] * v[1];
    let nmin = corners.iter().map(|&c| proj(c, nrm)).fold(f64::INFINITY, f64::min);
    let nmax = corners.iter().map(|&c| proj(c, nrm)).fold(f64::NEG_INFINITY, f64::max);
    let hs = spec.process.hatch_space;
    let step = spec.process.scan_speed / spec.frame_rate;
    let mut out = Vec::new();
    let mut line = 0usize;
    let mut o = nmin + hs / 2.0;
    while o <= nmax {
        // clip the line o·n + t·u to the rectangle (slab method)
        let base = [o * nrm[0], o * nrm[1]];
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for (b, d, lo, hi) in [(base[0], u[0], x0, x1), (base[1], u[1], y0, y1)] {
            if math::abs(d) < 1e-12 {
                if b < lo || b > hi {
                    t0 = f64::INFINITY;
                }
            } else {
                let (a, c) = ((lo - b) / d, (hi - b) / d);
                t0 = t0.max(a.min(c));
                t1 = t1.min(a.max(c));
            }
        }
        if t1 > t0 {
            let n = math::floor((t1 - t0) / step) as usize;
            let pts = (0..n).map(|j| t0 + step / 2.0 + j as f64 * step);
            let reverse = line % 2 == 1;
            let dir = normalize_dir(spec.hatch_angle + if reverse { 180.0 } else { 0.0 });
            let mut seg: Vec<([f64; 2], f64)> = pts.map(|t| ([base[0] + t * u[0], base[1] + t * u[1]], dir)).collect();
            if reverse {
                seg.reverse();
            }
            out.extend(seg);
            line += 1;
        }
        o += hs;
    }
    Ok(out)
}

fn normalize_dir(a: f64) -> f64 {
    math::rem_euclid(a, 360.0)
}

/// One scene per melt-pool sample along the serpentine path. The MP sits
/// at the template centre; the plate transform maps pixels to plate mm.
pub fn synth_layer_sequence(spec: &LayerSceneSpec) -> Result<Vec<SequenceFrame>, SynthError> {
    let path = serpentine_path(spec)?;
    if !(spec.pixels_per_mm > 0.0 && spec.pixels_per_mm.is_finite()) {
        return Err(invalid("pixels_per_mm", "must be positive"));
    }
    let mean = spec.count_model.mean(
        spec.process.power,
        spec.process.scan_speed / 1000.0,
        normalize_hatch_angle(spec.hatch_angle),
    );
    let mut out = Vec::with_capacity(path.len());
    for (i, (pos, dir)) in path.into_iter().enumerate() {
        let idx = i as u64;
        let mut count_rng = SplitMix64::derive(spec.seed, 2 * idx);
        let mut scene = spec.template.clone();
        scene.scan_direction = dir;
        scene.spatter_count = spec.count_model.draw(mean, &mut count_rng);
        scene.rng_seed = SplitMix64::derive(spec.seed, 2 * idx + 1).next_u64();
        let mut s = synth_frame(&scene)?;
        let s_px = 1.0 / spec.pixels_per_mm;
        let t = Homography::scale_translate(s_px, pos[0] - scene.mp_center[0] * s_px, pos[1] - scene.mp_center[1] * s_px);
        s.frame.meta = FrameMeta {
            frame_index: idx,
            timestamp: idx as f64 / spec.frame_rate,
            plate_transform: Some(t),
        };
        out.push(SequenceFrame {
            frame_index: idx,
            scene: s,
            mp_plate_position: pos,
            scan_direction: dir,
        });
    }
    Ok(out)
}

/// Roughness generator: a U-shaped VED trend plus a spatter term.
///
/// `sa = base + curvature·(VED − ved_opt)² + count_coef·count + N(0, noise_sigma)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoughnessModel {
    pub base: f64,
    pub curvature: f64,
    pub ved_opt: f64,
    pub count_coef: f64,
    pub noise_sigma: f64,
}

impl Default for RoughnessModel {
    fn default() -> Self {
        Self {
            base: 4.0,
            curvature: 6e-4,
            ved_opt: 80.0,
            count_coef: 2.5,
            noise_sigma: 0.3,
        }
    }
}

impl RoughnessModel {
    pub fn expected(&self, ved: f64, count: f64) -> f64 {
        let d = ved - self.ved_opt;
        self.base + self.curvature * d * d + self.count_coef * count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureDatasetSpec {
    /// `(bar_id, power W, speed mm/s, hatch_space mm)` per bar.
    pub bars: Vec<(u32, f64, f64, f64)>,
    pub layers: Vec<u32>,
    pub layer_thickness: f64,
    /// Hatch schedule anchored at `(angle, layer)`.
    pub hatch_anchor: (f64, u32),
    pub rotation_per_layer: f64,
    /// Melt pools averaged per (bar, layer) record.
    pub frames_per_layer: usize,
    pub count_model: CountModel,
    pub roughness: RoughnessModel,
    pub seed: u64,
}

impl Default for FeatureDatasetSpec {
    /// Bars 2, 4, 6, 8, 10 and 12 of the build over six monitored layers.
    fn default() -> Self {
        Self {
            bars: vec![
                (2, 250.0, 1000.0, 0.11),
                (4, 250.0, 750.0, 0.11),
                (6, 300.0, 1000.0, 0.11),
                (8, 200.0, 500.0, 0.11),
                (10, 300.0, 500.0, 0.11),
                (12, 200.0, 1000.0, 0.12),
            ],
            layers: vec![66, 67, 68, 69, 72, 75],
            layer_thickness: 0.04,
            hatch_anchor: (74.0, 66),
            rotation_per_layer: 67.0,
            frames_per_layer: 50,
            count_model: CountModel::default(),
            roughness: RoughnessModel::default(),
            seed: 0,
        }
    }
}

/// Per-(bar, layer) records: mean count over simulated melt pools,
/// roughness from the [`RoughnessModel`]. Records are ordered bar-major.
pub fn synth_feature_dataset(spec: &FeatureDatasetSpec) -> Result<Vec<LayerFeatureRecord>, SynthError> {
    if spec.frames_per_layer == 0 {
        return Err(invalid("frames_per_layer", "must be positive"));
    }
    let sched = HatchSchedule::anchored(spec.hatch_anchor.0, spec.hatch_anchor.1, spec.rotation_per_layer);
    let mut out = Vec::with_capacity(spec.bars.len() * spec.layers.len());
    for (bi, &(bar_id, power, speed, hs)) in spec.bars.iter().enumerate() {
        let p = ProcessParameters::new(power, speed, hs, spec.layer_thickness);
        let ved = compute_ved(&p)?;
        for (li, &layer) in spec.layers.iter().enumerate() {
            let theta = normalize_hatch_angle(sched.scan_angle(layer));
            let stream = (bi * spec.layers.len() + li) as u64;
            let mut rng = SplitMix64::derive(spec.seed, stream);
            let mu = spec.count_model.mean(power, speed / 1000.0, theta);
            let total: usize = (0..spec.frames_per_layer).map(|_| spec.count_model.draw(mu, &mut rng)).sum();
            let count = total as f64 / spec.frames_per_layer as f64;
            let sa = spec.roughness.expected(ved, count) + spec.roughness.noise_sigma * rng.normal();
            out.push(LayerFeatureRecord {
                bar_id,
                layer_index: layer,
                power,
                speed,
                hatch_space: hs,
                layer_thickness: spec.layer_thickness,
                ved,
                hatch_angle: theta,
                mean_spatter_count: count,
                sa,
                // Gaussian height deviations: σ = Sa·√(π/2)
                z_std: sa * math::sqrt(core::f64::consts::FRAC_PI_2),
            });
        }
    }
    Ok(out)
}

/// Independent scenes sharing a template: counts cycle through
/// `count_range`, scan directions are uniform and a fraction of frames
/// carry a flare column beside the melt pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameBatchSpec {
    pub frames: usize,
    /// Inclusive.
    pub count_range: [usize; 2],
    pub flare_fraction: f64,
    pub flare_intensity_range: [u8; 2],
    /// Inclusive.
    pub flare_spot_range: [usize; 2],
    pub flare_spacing_range: [f64; 2],
    pub template: SceneSpec,
    pub seed: u64,
}

impl Default for FrameBatchSpec {
    fn default() -> Self {
        Self {
            frames: 1,
            count_range: [0, 8],
            flare_fraction: 0.0,
            flare_intensity_range: [70, 110],
            flare_spot_range: [3, 8],
            flare_spacing_range: [6.0, 14.0],
            template: SceneSpec::default(),
            seed: 0,
        }
    }
}

pub fn batch_scene_specs(b: &FrameBatchSpec) -> Result<Vec<SceneSpec>, SynthError> {
    let [c0, c1] = b.count_range;
    if c0 > c1 {
        return Err(invalid("count_range", "min exceeds max"));
    }
    if !(0.0..=1.0).contains(&b.flare_fraction) {
        return Err(invalid("flare_fraction", "must lie in [0, 1]"));
    }
    let [i0, i1] = b.flare_intensity_range;
    let [s0, s1] = b.flare_spot_range;
    let [d0, d1] = b.flare_spacing_range;
    if i0 > i1 || s0 > s1 || !(d0 >= 0.0 && d1 >= d0) {
        return Err(invalid("flare_intensity_range", "ranges need min <= max"));
    }
    b.template.validate()?;
    let [w, h] = b.template.image_size;
    let (wf, hf) = (w as f64, h as f64);
    let mp = b.template.mp_center;
    let clear = b.template.mp_radius + 2.0 * b.template.eps + 4.0;
    (0..b.frames)
        .map(|i| {
            let mut g = SplitMix64::derive(b.seed, i as u64);
            let mut spec = b.template.clone();
            spec.spatter_count = c0 + i % (c1 - c0 + 1);
            spec.scan_direction = g.uniform(0.0, 360.0);
            spec.rng_seed = g.next_u64();
            spec.flare = None;
            if g.next_f64() < b.flare_fraction {
                // column on either side of the melt pool, clear of it
                let left = g.next_f64() < 0.5;
                let column_x = if left {
                    g.uniform(4.0_f64.min(mp[0] - clear), (mp[0] - clear).max(4.0))
                } else {
                    g.uniform((mp[0] + clear).min(wf - 5.0), (wf - 5.0).max(mp[0] + clear))
                };
                spec.flare = Some(FlareSpec {
                    column_x,
                    start_y: g.uniform(0.04 * hf, 0.25 * hf),
                    spot_count: g.uniform_int(s0 as i64, s1 as i64) as usize,
                    spot_spacing: g.uniform(d0, d1),
                    spot_intensity: g.uniform_int(i0 as i64, i1 as i64) as u8,
                    spot_radius: 1.5,
                });
            }
            Ok(spec)
        })
        .collect()
}

/// Smooth random surface: a sum of plane waves rescaled to an exact
/// peak-to-valley and shifted to `mean_height`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeightFieldSpec {
    pub width: usize,
    pub height: usize,
    /// μm
    pub peak_to_valley: f64,
    /// μm
    pub mean_height: f64,
    pub components: usize,
    /// Shortest wavelength, pixels.
    pub min_wavelength: f64,
    pub seed: u64,
}

impl Default for HeightFieldSpec {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            peak_to_valley: 100.0,
            mean_height: -30.0,
            components: 6,
            min_wavelength: 48.0,
            seed: 0,
        }
    }
}

pub fn synth_height_field(spec: &HeightFieldSpec) -> Result<HeightMap, SynthError> {
    if spec.width == 0 || spec.height == 0 || spec.width * spec.height < 2 {
        return Err(invalid("width", "need at least two pixels"));
    }
    if !(spec.peak_to_valley >= 0.0 && spec.peak_to_valley.is_finite()) || !spec.mean_height.is_finite() {
        return Err(invalid("peak_to_valley", "must be finite and non-negative"));
    }
    if spec.components == 0 || !(spec.min_wavelength >= 2.0) {
        return Err(invalid("components", "need at least one wave of wavelength >= 2 px"));
    }
    let mut rng = SplitMix64::new(spec.seed);
    let max_wl = 2.0 * spec.width.max(spec.height) as f64;
    let waves: Vec<(f64, f64, f64, f64)> = (0..spec.components)
        .map(|_| {
            let wl = rng.uniform(spec.min_wavelength, max_wl.max(spec.min_wavelength));
            let dir = rng.uniform(0.0, 2.0 * core::f64::consts::PI);
            let k = 2.0 * core::f64::consts::PI / wl;
            (k * math::cos(dir), k * math::sin(dir), rng.uniform(0.0, 2.0 * core::f64::consts::PI), rng.uniform(0.5, 1.0))
        })
        .collect();
    let raw = HeightMap::from_fn(spec.width, spec.height, |x, y| {
        waves
            .iter()
            .map(|&(kx, ky, ph, a)| a * math::sin(kx * x as f64 + ky * y as f64 + ph))
            .sum()
    });
    let lo = raw.heights.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.heights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { spec.peak_to_valley / (hi - lo) } else { 0.0 };
    let mid = (hi + lo) / 2.0;
    Ok(HeightMap {
        heights: raw.heights.iter().map(|v| spec.mean_height + (v - mid) * scale).collect(),
        ..raw
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{connected_components, Connectivity};
    use crate::registration::{count_spatters, dbscan};
    use proptest::prelude::*;

    /// Cluster sets by plain density reachability: connect core points
    /// within eps, then attach each border point to the reachable cluster
    /// whose smallest core index is lowest.
    fn reachability_oracle(pts: &[[f64; 2]], eps: f64, min_pts: usize) -> Vec<Vec<usize>> {
        let n = pts.len();
        let near = |i: usize, j: usize| {
            let dx = pts[i][0] - pts[j][0];
            let dy = pts[i][1] - pts[j][1];
            dx * dx + dy * dy <= eps * eps
        };
        let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
        let mut comp = vec![usize::MAX; n];
        let mut ncomp = 0;
        for s in 0..n {
            if !core[s] || comp[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            comp[s] = ncomp;
            while let Some(i) = stack.pop() {
                for j in 0..n {
                    if core[j] && comp[j] == usize::MAX && near(i, j) {
                        comp[j] = ncomp;
                        stack.push(j);
                    }
                }
            }
            ncomp += 1;
        }
        let mut clusters = vec![Vec::new(); ncomp];
        for i in 0..n {
            let c = if core[i] {
                Some(comp[i])
            } else {
                (0..n).filter(|&j| core[j] && near(i, j)).map(|j| comp[j]).min()
            };
            if let Some(c) = c {
                clusters[c].push(i);
            }
        }
        clusters
    }

    fn spatter_points(lm: &LabelMap) -> Vec<[f64; 2]> {
        let mut v = Vec::new();
        for y in 0..lm.height() {
            for x in 0..lm.width() {
                if lm.get(x, y) == Class::Spatter {
                    v.push([x as f64, y as f64]);
                }
            }
        }
        v
    }

    #[test]
    fn empty_scene_has_no_spatter_pixels() {
        let spec = SceneSpec {
            background_noise_sigma: 0.0,
            ..SceneSpec::default()
        };
        let s = synth_frame(&spec).unwrap();
        assert_eq!(s.labels.count(Class::Spatter), 0);
        assert_eq!(s.truth.spatter_count, 0);
        assert!(s.labels.count(Class::MeltPool) > 0);
    }

    #[test]
    fn seeded_frames_identical() {
        let spec = SceneSpec {
            spatter_count: 5,
            rng_seed: 42,
            ..SceneSpec::default()
        };
        let a = synth_frame(&spec).unwrap();
        let b = synth_frame(&spec).unwrap();
        assert_eq!(a, b);
        let c = synth_frame(&SceneSpec { rng_seed: 43, ..spec }).unwrap();
        assert_ne!(a.frame.pixels, c.frame.pixels);
    }

    #[test]
    fn five_spatters_give_five_clusters() {
        let spec = SceneSpec {
            spatter_count: 5,
            rng_seed: 42,
            ..SceneSpec::default()
        };
        let s = synth_frame(&spec).unwrap();
        let pts = spatter_points(&s.labels);
        let p = DbscanParams::default();
        let oracle = reachability_oracle(&pts, p.eps, p.min_pts);
        assert_eq!(oracle.len(), 5);
        let got = dbscan(&pts, &p).unwrap();
        assert_eq!(got.clusters, oracle);
        assert_eq!(count_spatters(&s.labels, &p).unwrap().count, 5);
    }

    #[test]
    fn crowded_scene_is_infeasible() {
        let spec = SceneSpec {
            image_size: [40, 40],
            mp_center: [20.0, 20.0],
            spatter_count: 30,
            ..SceneSpec::default()
        };
        assert!(matches!(synth_frame(&spec), Err(SynthError::SceneInfeasible { wanted: 30, .. })));
    }

    #[test]
    fn mp_outside_image_rejected() {
        let spec = SceneSpec {
            mp_center: [3.0, 128.0],
            ..SceneSpec::default()
        };
        assert!(matches!(synth_frame(&spec), Err(SynthError::InvalidSpec { name: "mp_center", .. })));
    }

    #[test]
    fn flare_is_background_in_truth() {
        let flare = FlareSpec {
            column_x: 40.0,
            start_y: 20.0,
            spot_count: 5,
            spot_spacing: 8.0,
            spot_intensity: 120,
            spot_radius: 1.5,
        };
        let spec = SceneSpec {
            flare: Some(flare),
            background_noise_sigma: 0.0,
            ..SceneSpec::default()
        };
        let s = synth_frame(&spec).unwrap();
        assert_eq!(s.frame.get(40, 20), 120);
        assert_eq!(s.labels.get(40, 20), Class::Background);
        assert_eq!(s.labels.count(Class::Spatter), 0);
    }

    #[test]
    fn truth_angles_follow_registration_convention() {
        let spec = SceneSpec {
            spatter_count: 6,
            scan_direction: 30.0,
            rng_seed: 9,
            ..SceneSpec::default()
        };
        let s = synth_frame(&spec).unwrap();
        for (c, a) in s.truth.spatter_centroids.iter().zip(&s.truth.ejection_angles) {
            let e = ejection_angle(s.truth.mp_center, *c, 30.0).unwrap();
            assert_eq!(e, *a);
            // default distribution spans the tail
            assert!((85.0..=275.0).contains(a), "{a}");
        }
    }

    #[test]
    fn zero_area_region_gives_empty_sequence() {
        let spec = LayerSceneSpec {
            process: ProcessParameters::new(200.0, 1000.0, 0.11, 0.04),
            hatch_angle: 74.0,
            region_mm: [0.0, 0.0, 0.0, 5.0],
            frame_rate: 1000.0,
            pixels_per_mm: 20.0,
            template: SceneSpec::default(),
            count_model: CountModel::default(),
            seed: 1,
        };
        assert!(synth_layer_sequence(&spec).unwrap().is_empty());
        let bad = LayerSceneSpec {
            region_mm: [1.0, 0.0, 0.0, 5.0],
            ..spec
        };
        assert!(synth_layer_sequence(&bad).is_err());
    }

    #[test]
    fn serpentine_alternates_and_covers_region() {
        let spec = LayerSceneSpec {
            process: ProcessParameters::new(200.0, 1000.0, 0.5, 0.04),
            hatch_angle: 0.0,
            region_mm: [0.0, 0.0, 4.0, 2.0],
            frame_rate: 1000.0,
            pixels_per_mm: 20.0,
            template: SceneSpec::default(),
            count_model: CountModel::default(),
            seed: 0,
        };
        let path = serpentine_path(&spec).unwrap();
        // 4 lines of 4 samples each
        assert_eq!(path.len(), 16);
        assert_eq!(path[0], ([0.5, 0.25], 0.0));
        assert_eq!(path[4], ([3.5, 0.75], 180.0));
        assert!(path.iter().all(|(p, _)| p[0] > 0.0 && p[0] < 4.0 && p[1] > 0.0 && p[1] < 2.0));
    }

    #[test]
    fn plate_transform_maps_mp_to_path() {
        let spec = LayerSceneSpec {
            process: ProcessParameters::new(200.0, 1000.0, 0.5, 0.04),
            hatch_angle: 74.0,
            region_mm: [0.0, 0.0, 3.0, 3.0],
            frame_rate: 1000.0,
            pixels_per_mm: 20.0,
            template: SceneSpec {
                image_size: [96, 96],
                mp_center: [48.0, 48.0],
                spatter_reach: 20.0,
                ..SceneSpec::default()
            },
            count_model: CountModel::default(),
            seed: 3,
        };
        let seq = synth_layer_sequence(&spec).unwrap();
        assert!(!seq.is_empty());
        for f in &seq {
            let t = f.scene.frame.meta.plate_transform.unwrap();
            let p = t.apply([48.0, 48.0]);
            assert!((p[0] - f.mp_plate_position[0]).abs() < 1e-12);
            assert!((p[1] - f.mp_plate_position[1]).abs() < 1e-12);
            let d = f.scan_direction;
            assert!((d - 74.0).abs() < 1e-9 || (d - 254.0).abs() < 1e-9);
        }
    }

    #[test]
    fn count_model_calibration_points() {
        let m = CountModel::default();
        assert!((m.mean(200.0, 1.0, 74.0) - 1.44).abs() < 1e-12);
        assert!((m.mean(350.0, 1.0, 74.0) - 4.26).abs() < 1e-12);
        assert!((m.mean(200.0, 0.5, 74.0) - 3.44).abs() < 1e-12);
        assert!(m.mean(200.0, 1.0, 141.0) > m.mean(200.0, 1.0, 28.0));
    }

    #[test]
    fn feature_dataset_shape_and_consistency() {
        let recs = synth_feature_dataset(&FeatureDatasetSpec::default()).unwrap();
        assert_eq!(recs.len(), 36);
        for r in &recs {
            r.validate().unwrap();
            assert!(r.hatch_angle >= 0.0 && r.hatch_angle < 180.0);
        }
        let l67 = recs.iter().find(|r| r.bar_id == 2 && r.layer_index == 67).unwrap();
        assert!((l67.hatch_angle - 141.0).abs() < 1e-9);
        assert_eq!(recs, synth_feature_dataset(&FeatureDatasetSpec::default()).unwrap());
    }

    #[test]
    fn batch_covers_count_range() {
        let b = FrameBatchSpec {
            frames: 18,
            flare_fraction: 1.0,
            seed: 4,
            ..FrameBatchSpec::default()
        };
        let specs = batch_scene_specs(&b).unwrap();
        let counts: Vec<usize> = specs.iter().map(|s| s.spatter_count).collect();
        assert_eq!(&counts[..9], &[0, 1, 2, 3, 4, 5, 6, 7, 8]);
        for s in &specs {
            let f = s.flare.unwrap();
            assert!((70..=110).contains(&f.spot_intensity));
            assert!((f.column_x - 128.0).abs() >= 8.0 + 6.0 + 4.0 - 1e-9);
            synth_frame(s).unwrap();
        }
        assert_eq!(specs, batch_scene_specs(&b).unwrap());
    }

    #[test]
    fn height_field_peak_to_valley() {
        let h = synth_height_field(&HeightFieldSpec::default()).unwrap();
        let lo = h.heights.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = h.heights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((hi - lo - 100.0).abs() < 1e-9);
        assert!(((hi + lo) / 2.0 + 30.0).abs() < 1e-9);
        assert_eq!(h, synth_height_field(&HeightFieldSpec::default()).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn labels_match_truth(seed in any::<u64>(), count in 0usize..8, flare_on in any::<bool>()) {
            let flare = flare_on.then_some(FlareSpec {
                column_x: 30.0, start_y: 10.0, spot_count: 6, spot_spacing: 10.0,
                spot_intensity: 120, spot_radius: 1.5,
            });
            let spec = SceneSpec { spatter_count: count, rng_seed: seed, flare, ..SceneSpec::default() };
            let s = synth_frame(&spec).unwrap();
            let comps = connected_components(&s.labels.mask(Class::Spatter), Connectivity::Eight);
            prop_assert_eq!(comps.components.len(), s.truth.spatter_count);
            prop_assert_eq!(s.truth.spatter_centroids.len(), s.truth.ejection_angles.len());
            let c = count_spatters(&s.labels, &DbscanParams::default()).unwrap();
            prop_assert_eq!(c.count, count);
        }
    }
}
