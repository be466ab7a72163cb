//! Frames, perspective correction and low-level image utilities.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::segmentation::{Class, LabelMap};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImagingError {
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("degenerate point configuration: three or more points are collinear")]
    SingularConfiguration,
    #[error("homography is not invertible (|det| = {0:e})")]
    NotInvertible(f64),
    #[error("threshold ordering violated: t_mp ({t_mp}) must exceed t_spatter ({t_spatter})")]
    ThresholdOrder { t_mp: u8, t_spatter: u8 },
}

/// Acquisition metadata carried with a frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub frame_index: u64,
    /// Seconds since the start of the layer.
    pub timestamp: f64,
    /// Maps pixel coordinates to build-plate millimetres.
    pub plate_transform: Option<Homography>,
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub meta: FrameMeta,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImagingError> {
        if pixels.len() != width * height {
            return Err(ImagingError::BufferSize {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
            meta: FrameMeta::default(),
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height],
            meta: FrameMeta::default(),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }
}

/// Planar projective transform, normalized so `m[2][2] == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl TryFrom<[f64; 9]> for Homography {
    type Error = ImagingError;

    fn try_from(v: [f64; 9]) -> Result<Self, Self::Error> {
        Homography::from_row_major(v)
    }
}

impl From<Homography> for [f64; 9] {
    fn from(h: Homography) -> Self {
        h.to_row_major()
    }
}

const MIN_DET: f64 = 1e-12;

impl Homography {
    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            m: [[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]],
        }
    }

    /// Uniform scale about the origin followed by a translation.
    pub fn scale_translate(scale: f64, dx: f64, dy: f64) -> Self {
        Self {
            m: [[scale, 0.0, dx], [0.0, scale, dy], [0.0, 0.0, 1.0]],
        }
    }

    /// Normalizes by the bottom-right entry and checks invertibility.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self, ImagingError> {
        let s = m[2][2];
        if s == 0.0 || !s.is_finite() {
            return Err(ImagingError::NotInvertible(0.0));
        }
        let mut n = m;
        for row in n.iter_mut() {
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let h = Self { m: n };
        let det = h.det();
        if !(math::abs(det) > MIN_DET) {
            return Err(ImagingError::NotInvertible(math::abs(det)));
        }
        Ok(h)
    }

    pub fn from_row_major(v: [f64; 9]) -> Result<Self, ImagingError> {
        Self::from_matrix([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.m;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let m = &self.m;
        let w = m[2][0] * p[0] + m[2][1] * p[1] + m[2][2];
        [
            (m[0][0] * p[0] + m[0][1] * p[1] + m[0][2]) / w,
            (m[1][0] * p[0] + m[1][1] * p[1] + m[1][2]) / w,
        ]
    }

    pub fn inverse(&self) -> Result<Self, ImagingError> {
        let m = &self.m;
        let det = self.det();
        if !(math::abs(det) > MIN_DET) {
            return Err(ImagingError::NotInvertible(math::abs(det)));
        }
        let adj = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        Self::from_matrix(adj)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Self, ImagingError> {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        Self::from_matrix(r)
    }
}

fn collinear(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let scale = math::hypot(b[0] - a[0], b[1] - a[1]) * math::hypot(c[0] - a[0], c[1] - a[1]);
    math::abs(cross) <= 1e-12 * scale.max(1e-300)
}

fn any_three_collinear(p: &[[f64; 2]; 4]) -> bool {
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES.iter().any(|t| collinear(p[t[0]], p[t[1]], p[t[2]]))
}

/// Solves `a x = b` in place with partial pivoting. Returns `None` when a
/// pivot vanishes.
pub(crate) fn solve_dense<const N: usize>(a: &mut [[f64; N]; N], b: &mut [f64; N]) -> Option<[f64; N]> {
    for col in 0..N {
        let piv = (col..N).max_by(|&i, &j| {
            math::abs(a[i][col])
                .partial_cmp(&math::abs(a[j][col]))
                .unwrap_or(core::cmp::Ordering::Equal)
        })?;
        if !(math::abs(a[piv][col]) > 1e-14) {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..N {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..N {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let s: f64 = (row + 1..N).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Homography mapping four source points onto four destination points.
///
/// Solves the 8×8 direct linear system with `h33 = 1`. Points are
/// shifted and scaled first so the system stays well conditioned for
/// pixel-sized coordinates.
pub fn estimate_homography(src: &[[f64; 2]; 4], dst: &[[f64; 2]; 4]) -> Result<Homography, ImagingError> {
    if any_three_collinear(src) || any_three_collinear(dst) {
        return Err(ImagingError::SingularConfiguration);
    }
    let ts = normalizer(src);
    let td = normalizer(dst);
    let s: [[f64; 2]; 4] = core::array::from_fn(|i| ts.apply(src[i]));
    let d: [[f64; 2]; 4] = core::array::from_fn(|i| td.apply(dst[i]));

    let mut a = [[0.0; 8]; 8];
    let mut b = [0.0; 8];
    for i in 0..4 {
        let [x, y] = s[i];
        let [u, v] = d[i];
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y];
        b[2 * i] = u;
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y];
        b[2 * i + 1] = v;
    }
    let h = solve_dense(&mut a, &mut b).ok_or(ImagingError::SingularConfiguration)?;
    let hn = Homography::from_row_major([h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0])?;
    // denormalize: H = Td^-1 · Hn · Ts
    td.inverse()?.compose(&hn)?.compose(&ts)
}

fn normalizer(p: &[[f64; 2]; 4]) -> Homography {
    let cx = p.iter().map(|q| q[0]).sum::<f64>() / 4.0;
    let cy = p.iter().map(|q| q[1]).sum::<f64>() / 4.0;
    let mean_dist = p.iter().map(|q| math::hypot(q[0] - cx, q[1] - cy)).sum::<f64>() / 4.0;
    let s = if mean_dist > 0.0 {
        core::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Homography::scale_translate(s, -s * cx, -s * cy)
}

/// Bilinear sample at a real-valued position; `None` outside the image.
pub fn sample_bilinear(frame: &Frame, x: f64, y: f64) -> Option<f64> {
    const SLACK: f64 = 1e-6;
    let (w, h) = (frame.width as f64, frame.height as f64);
    if frame.width == 0 || frame.height == 0 {
        return None;
    }
    if !(x >= -SLACK && y >= -SLACK && x <= w - 1.0 + SLACK && y <= h - 1.0 + SLACK) {
        return None;
    }
    let x = x.clamp(0.0, w - 1.0);
    let y = y.clamp(0.0, h - 1.0);
    let x0 = math::floor(x) as usize;
    let y0 = math::floor(y) as usize;
    let x1 = (x0 + 1).min(frame.width - 1);
    let y1 = (y0 + 1).min(frame.height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let p = |xx, yy| f64::from(frame.get(xx, yy));
    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
    let bot = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
    Some(top * (1.0 - fy) + bot * fy)
}

/// Resamples `frame` through `h` (source → output) by inverse mapping.
/// Output pixels whose preimage falls outside the source are 0.
pub fn warp(frame: &Frame, h: &Homography, out_width: usize, out_height: usize) -> Result<Frame, ImagingError> {
    let inv = h.inverse()?;
    let mut out = Frame::zeros(out_width, out_height);
    out.meta = frame.meta.clone();
    for y in 0..out_height {
        for x in 0..out_width {
            let [sx, sy] = inv.apply([x as f64, y as f64]);
            if let Some(v) = sample_bilinear(frame, sx, sy) {
                out.set(x, y, math::round(v).clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(out)
}

/// Binary image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    pub(crate) fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(0, -1), (-1, 0), (1, 0), (0, 1)],
            Connectivity::Eight => &[
                (-1, -1),
                (0, -1),
                (1, -1),
                (-1, 0),
                (1, 0),
                (-1, 1),
                (0, 1),
                (1, 1),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// 1-based label; labels are assigned in raster order of first pixel.
    pub label: u32,
    pub area: usize,
    /// Mean `(x, y)` of member pixels.
    pub centroid: [f64; 2],
    /// First member pixel in raster order.
    pub first_pixel: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub width: usize,
    pub height: usize,
    /// Per-pixel label, 0 for background.
    pub labels: Vec<u32>,
    pub components: Vec<Component>,
}

/// Labels connected foreground regions in raster-scan order.
pub fn connected_components(mask: &Mask, connectivity: Connectivity) -> Components {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if !mask.get(x0, y0) || labels[y0 * w + x0] != 0 {
                continue;
            }
            let label = components.len() as u32 + 1;
            labels[y0 * w + x0] = label;
            queue.push_back((x0, y0));
            let (mut area, mut sx, mut sy) = (0usize, 0.0f64, 0.0f64);
            while let Some((x, y)) = queue.pop_front() {
                area += 1;
                sx += x as f64;
                sy += y as f64;
                for &(dx, dy) in connectivity.offsets() {
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    let idx = ny * w + nx;
                    if mask.bits[idx] && labels[idx] == 0 {
                        labels[idx] = label;
                        queue.push_back((nx, ny));
                    }
                }
            }
            components.push(Component {
                label,
                area,
                centroid: [sx / area as f64, sy / area as f64],
                first_pixel: (x0, y0),
            });
        }
    }
    Components {
        width: w,
        height: h,
        labels,
        components,
    }
}

/// Raw intensity labeling: `>= t_mp` is melt pool, `[t_spatter, t_mp)` is
/// spatter, anything darker is background.
pub fn threshold_segment(frame: &Frame, t_mp: u8, t_spatter: u8) -> Result<LabelMap, ImagingError> {
    if t_mp <= t_spatter {
        return Err(ImagingError::ThresholdOrder { t_mp, t_spatter });
    }
    let labels = frame
        .pixels
        .iter()
        .map(|&v| {
            if v >= t_mp {
                Class::MeltPool
            } else if v >= t_spatter {
                Class::Spatter
            } else {
                Class::Background
            }
        })
        .collect();
    Ok(LabelMap::from_classes(frame.width, frame.height, labels))
}
