//! Spatter signature extraction and registration.
//!
//! Per frame: find the melt-pool center, cluster spatter pixels with
//! DBSCAN, count clusters and measure their ejection angles relative to
//! the scan direction. Per layer: collect observations ordered by frame
//! index and aggregate spatter counts.
//!
//! Angle convention: degrees in `[0, 360)`, measured from the scan
//! direction towards the spatter displacement with positive rotation from
//! +x to +y of the pixel grid. 0° is straight ahead of the laser, 180° is
//! the melt-pool tail.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{connected_components, Connectivity, Frame, Homography};
use crate::math;
use crate::segmentation::{touches_class, Class, LabelMap, SegmentationError, Segmenter};

/// Version tag written into serialized layer maps.
pub const LAYER_MAP_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistrationError {
    #[error("frame contains no melt-pool pixels")]
    NoMeltPool,
    #[error("ejection angle undefined: spatter centroid coincides with melt-pool center")]
    UndefinedAngle,
    #[error("no observations to aggregate")]
    Empty,
    #[error("invalid DBSCAN parameters (eps {eps}, min_pts {min_pts})")]
    InvalidParams { eps: f64, min_pts: usize },
    #[error("histogram edges must be strictly increasing with at least two entries")]
    InvalidEdges,
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbscanParams {
    /// Neighborhood radius in pixels.
    pub eps: f64,
    /// Neighbors (including the point itself) needed for a core point.
    pub min_pts: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self { eps: 3.0, min_pts: 2 }
    }
}

impl DbscanParams {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        if self.eps.is_finite() && self.eps > 0.0 && self.min_pts >= 1 {
            Ok(())
        } else {
            Err(RegistrationError::InvalidParams {
                eps: self.eps,
                min_pts: self.min_pts,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Clustering {
    /// Point indices per cluster, each sorted ascending. Clusters are
    /// ordered by their lowest-index core point.
    pub clusters: Vec<Vec<usize>>,
    /// Points in no cluster, ascending.
    pub noise: Vec<usize>,
}

struct GridIndex<'a> {
    points: &'a [[f64; 2]],
    eps: f64,
    cells: BTreeMap<(i64, i64), Vec<usize>>,
}

impl<'a> GridIndex<'a> {
    fn new(points: &'a [[f64; 2]], eps: f64) -> Self {
        let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::cell(p, eps)).or_default().push(i);
        }
        Self { points, eps, cells }
    }

    fn cell(p: &[f64; 2], eps: f64) -> (i64, i64) {
        (math::floor(p[0] / eps) as i64, math::floor(p[1] / eps) as i64)
    }

    fn neighbors(&self, i: usize, out: &mut Vec<usize>) {
        out.clear();
        let p = self.points[i];
        let (cx, cy) = Self::cell(&p, self.eps);
        let eps2 = self.eps * self.eps;
        for gx in cx - 1..=cx + 1 {
            for gy in cy - 1..=cy + 1 {
                if let Some(members) = self.cells.get(&(gx, gy)) {
                    for &j in members {
                        let q = self.points[j];
                        let dx = p[0] - q[0];
                        let dy = p[1] - q[1];
                        if dx * dx + dy * dy <= eps2 {
                            out.push(j);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Unvisited,
    Noise,
    Member(usize),
}

/// DBSCAN over 2-D points with the Euclidean metric.
///
/// A point is core when at least `min_pts` points (itself included) lie
/// within `eps`. A border point joins the first cluster that reaches it in
/// input order.
pub fn dbscan(points: &[[f64; 2]], params: &DbscanParams) -> Result<Clustering, RegistrationError> {
    params.validate()?;
    let n = points.len();
    let index = GridIndex::new(points, params.eps);
    let mut state = vec![State::Unvisited; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut nbrs = Vec::new();
    let mut inner = Vec::new();
    let mut queue = Vec::new();

    for i in 0..n {
        if state[i] != State::Unvisited {
            continue;
        }
        index.neighbors(i, &mut nbrs);
        if nbrs.len() < params.min_pts {
            state[i] = State::Noise;
            continue;
        }
        let c = clusters.len();
        let mut members = vec![i];
        state[i] = State::Member(c);
        queue.clear();
        queue.extend(nbrs.iter().copied().filter(|&j| j != i));
        let mut head = 0;
        while head < queue.len() {
            let j = queue[head];
            head += 1;
            match state[j] {
                State::Member(_) => continue,
                State::Noise => {
                    state[j] = State::Member(c);
                    members.push(j);
                    continue;
                }
                State::Unvisited => {
                    state[j] = State::Member(c);
                    members.push(j);
                }
            }
            index.neighbors(j, &mut inner);
            if inner.len() >= params.min_pts {
                queue.extend(inner.iter().copied().filter(|&k| state[k] != State::Member(c)));
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    let noise = (0..n).filter(|&i| state[i] == State::Noise).collect();
    Ok(Clustering { clusters, noise })
}

/// Centroid of the largest 8-connected melt-pool component. Area ties go
/// to the component whose first pixel comes first in raster order.
pub fn extract_mp_center(lm: &LabelMap) -> Result<[f64; 2], RegistrationError> {
    let comps = connected_components(&lm.mask(Class::MeltPool), Connectivity::Eight);
    let mut best: Option<&crate::imaging::Component> = None;
    for c in &comps.components {
        if best.is_none_or(|b| c.area > b.area) {
            best = Some(c);
        }
    }
    best.map(|c| c.centroid).ok_or(RegistrationError::NoMeltPool)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpatterCount {
    pub count: usize,
    /// Mean pixel coordinate of each counted cluster.
    pub centroids: Vec<[f64; 2]>,
    /// Clusters dropped because they touch the melt pool.
    pub attached_to_mp: usize,
    /// Spatter pixels DBSCAN left as noise.
    pub noise_pixels: usize,
}

/// Counts spatter clusters in a label map. Clusters with a pixel
/// 8-adjacent to the melt pool are not counted: they cannot be told apart
/// from the pool itself.
pub fn count_spatters(lm: &LabelMap, params: &DbscanParams) -> Result<SpatterCount, RegistrationError> {
    let mut points = Vec::new();
    for y in 0..lm.height() {
        for x in 0..lm.width() {
            if lm.get(x, y) == Class::Spatter {
                points.push([x as f64, y as f64]);
            }
        }
    }
    let clustering = dbscan(&points, params)?;
    let mut out = SpatterCount {
        noise_pixels: clustering.noise.len(),
        ..SpatterCount::default()
    };
    for members in &clustering.clusters {
        let attached = members.iter().any(|&i| {
            let [x, y] = points[i];
            touches_class(lm, x as usize, y as usize, Class::MeltPool)
        });
        if attached {
            out.attached_to_mp += 1;
            continue;
        }
        let (sx, sy) = members.iter().fold((0.0, 0.0), |(sx, sy), &i| (sx + points[i][0], sy + points[i][1]));
        let k = members.len() as f64;
        out.centroids.push([sx / k, sy / k]);
    }
    out.count = out.centroids.len();
    Ok(out)
}

/// Angle of the spatter displacement relative to the scan direction,
/// degrees in `[0, 360)`.
pub fn ejection_angle(mp_center: [f64; 2], spatter: [f64; 2], scan_direction_deg: f64) -> Result<f64, RegistrationError> {
    let dx = spatter[0] - mp_center[0];
    let dy = spatter[1] - mp_center[1];
    if dx == 0.0 && dy == 0.0 {
        return Err(RegistrationError::UndefinedAngle);
    }
    let a = math::rad_to_deg(math::atan2(dy, dx)) - scan_direction_deg;
    Ok(math::rem_euclid(a, 360.0))
}

/// One melt pool's registered spatter signature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MPObservation {
    pub frame_index: u64,
    pub mp_center_px: [f64; 2],
    pub mp_center_mm: [f64; 2],
    pub spatter_count: usize,
    pub ejection_angles: Vec<f64>,
    pub spatter_centroids_px: Vec<[f64; 2]>,
    pub scan_direction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFrame {
    pub frame_index: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerAggregate {
    /// Mean spatter count per melt pool.
    pub mean: f64,
    /// Population standard deviation of the per-pool count.
    pub std_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSignatureMap {
    pub schema_version: u32,
    pub layer_index: u32,
    /// Sorted by `frame_index`.
    pub observations: Vec<MPObservation>,
    pub skipped: Vec<SkippedFrame>,
    /// `None` when the layer has no observations.
    pub aggregates: Option<LayerAggregate>,
}

pub enum FrameSource {
    /// Raw frame to be segmented.
    Frame(Frame),
    /// Externally produced label map.
    Labels(LabelMap),
}

pub struct FrameInput {
    pub frame_index: u64,
    pub source: FrameSource,
    /// Pixel → plate millimetres.
    pub plate_transform: Homography,
    pub scan_direction: f64,
}

/// Segments (if needed) and registers a single frame.
pub fn register_frame(
    input: &FrameInput,
    segmenter: &dyn Segmenter,
    params: &DbscanParams,
) -> Result<MPObservation, RegistrationError> {
    let segmented;
    let lm = match &input.source {
        FrameSource::Labels(lm) => lm,
        FrameSource::Frame(f) => {
            segmented = segmenter.segment(f)?;
            &segmented
        }
    };
    let center = extract_mp_center(lm)?;
    let spatters = count_spatters(lm, params)?;
    let ejection_angles = spatters
        .centroids
        .iter()
        .map(|&c| ejection_angle(center, c, input.scan_direction))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MPObservation {
        frame_index: input.frame_index,
        mp_center_px: center,
        mp_center_mm: input.plate_transform.apply(center),
        spatter_count: spatters.count,
        ejection_angles,
        spatter_centroids_px: spatters.centroids,
        scan_direction: input.scan_direction,
    })
}

/// Builds a layer map from per-frame results in any order.
pub fn assemble_layer(
    layer_index: u32,
    results: impl IntoIterator<Item = (u64, Result<MPObservation, RegistrationError>)>,
) -> LayerSignatureMap {
    let mut observations = Vec::new();
    let mut skipped = Vec::new();
    for (frame_index, r) in results {
        match r {
            Ok(o) => observations.push(o),
            Err(e) => skipped.push(SkippedFrame {
                frame_index,
                reason: e.to_string(),
            }),
        }
    }
    observations.sort_by_key(|o| o.frame_index);
    skipped.sort_by_key(|s| s.frame_index);
    let mut map = LayerSignatureMap {
        schema_version: LAYER_MAP_SCHEMA_VERSION,
        layer_index,
        observations,
        skipped,
        aggregates: None,
    };
    map.aggregates = layer_aggregate(&map).ok();
    map
}

/// Registers every frame of a layer. Frames without a melt pool are
/// recorded in `skipped` rather than failing the layer.
pub fn register_layer(
    frames: &[FrameInput],
    layer_index: u32,
    segmenter: &dyn Segmenter,
    params: &DbscanParams,
) -> LayerSignatureMap {
    assemble_layer(
        layer_index,
        frames.iter().map(|f| (f.frame_index, register_frame(f, segmenter, params))),
    )
}

/// Mean and population standard deviation of per-pool spatter counts.
pub fn layer_aggregate(map: &LayerSignatureMap) -> Result<LayerAggregate, RegistrationError> {
    aggregate_counts(map.observations.iter().map(|o| o.spatter_count))
}

pub fn aggregate_counts(counts: impl IntoIterator<Item = usize>) -> Result<LayerAggregate, RegistrationError> {
    let counts: Vec<usize> = counts.into_iter().collect();
    if counts.is_empty() {
        return Err(RegistrationError::Empty);
    }
    let n = counts.len() as f64;
    let total: usize = counts.iter().sum();
    let mean = total as f64 / n;
    let var = counts.iter().map(|&c| (c as f64 - mean) * (c as f64 - mean)).sum::<f64>() / n;
    Ok(LayerAggregate {
        mean,
        std_dev: math::sqrt(var),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// `counts[i]` covers `[edges[i], edges[i + 1])`.
    pub counts: Vec<u64>,
    pub underflow: u64,
    /// Values at or beyond the last edge, plus NaNs.
    pub overflow: u64,
}

impl Histogram {
    pub fn mode_bin(&self) -> Option<usize> {
        let max = *self.counts.iter().max()?;
        if max == 0 {
            return None;
        }
        self.counts.iter().position(|&c| c == max)
    }
}

pub fn histogram(values: &[f64], edges: &[f64]) -> Result<Histogram, RegistrationError> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(RegistrationError::InvalidEdges);
    }
    let mut h = Histogram {
        edges: edges.to_vec(),
        counts: vec![0; edges.len() - 1],
        underflow: 0,
        overflow: 0,
    };
    for &v in values {
        if v < edges[0] {
            h.underflow += 1;
        } else if !(v < edges[edges.len() - 1]) {
            h.overflow += 1;
        } else {
            // last edge e with e <= v
            let bin = edges.partition_point(|&e| e <= v) - 1;
            h.counts[bin] += 1;
        }
    }
    Ok(h)
}
