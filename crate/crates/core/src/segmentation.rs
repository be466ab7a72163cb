//! Three-class label maps, segmenters and segmentation metrics.
//!
//! Class ids are fixed: 0 background, 1 melt pool (with plume), 2 spatter.
//! Any producer of per-pixel labels (an external network, the reference
//! heuristic, K-means) plugs in through [`Segmenter`].

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{connected_components, threshold_segment, Connectivity, Frame, ImagingError, Mask};
use crate::math;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SegmentationError {
    #[error("invalid class id {value} at pixel {index}")]
    InvalidClass { index: usize, value: u8 },
    #[error("size mismatch: {a:?} vs {b:?}")]
    SizeMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("label buffer has {actual} entries, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("invalid probability vector at pixel {index}")]
    InvalidProbabilities { index: usize },
    #[error("K-means needs at least {k} distinct intensities, found {found}")]
    DegenerateInput { k: usize, found: usize },
    #[error("unsupported cluster count {0}; expected 3 or 4")]
    UnsupportedK(usize),
    #[error("input of length {len} too short for kernel span {span}")]
    InputTooShort { len: usize, span: usize },
    #[error("invalid dilated kernel: {0}")]
    InvalidKernel(&'static str),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

/// Per-pixel class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Class {
    Background = 0,
    MeltPool = 1,
    Spatter = 2,
}

impl Class {
    pub const COUNT: usize = 3;

    pub fn id(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for Class {
    type Error = u8;

    fn try_from(v: u8) -> Result<Self, u8> {
        match v {
            0 => Ok(Class::Background),
            1 => Ok(Class::MeltPool),
            2 => Ok(Class::Spatter),
            other => Err(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<Class>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![Class::Background; width * height],
        }
    }

    pub(crate) fn from_classes(width: usize, height: usize, labels: Vec<Class>) -> Self {
        debug_assert_eq!(labels.len(), width * height);
        Self { width, height, labels }
    }

    /// Validates raw class ids.
    pub fn from_raw(width: usize, height: usize, raw: &[u8]) -> Result<Self, SegmentationError> {
        if raw.len() != width * height {
            return Err(SegmentationError::BufferSize {
                expected: width * height,
                actual: raw.len(),
            });
        }
        let labels = raw
            .iter()
            .enumerate()
            .map(|(index, &v)| Class::try_from(v).map_err(|value| SegmentationError::InvalidClass { index, value }))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { width, height, labels })
    }

    pub fn to_raw(&self) -> Vec<u8> {
        self.labels.iter().map(|c| c.id()).collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[Class] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Class {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: Class) {
        self.labels[y * self.width + x] = c;
    }

    pub fn mask(&self, class: Class) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|&c| c == class).collect(),
        }
    }

    pub fn count(&self, class: Class) -> usize {
        self.labels.iter().filter(|&&c| c == class).count()
    }

    /// Errors unless the map matches a frame's dimensions.
    pub fn check_dims(&self, width: usize, height: usize) -> Result<(), SegmentationError> {
        if (self.width, self.height) != (width, height) {
            return Err(SegmentationError::SizeMismatch {
                a: (self.width, self.height),
                b: (width, height),
            });
        }
        Ok(())
    }
}

/// Anything that turns a frame into a label map.
pub trait Segmenter {
    fn segment(&self, frame: &Frame) -> Result<LabelMap, SegmentationError>;
}

/// Thresholding followed by vertical flare-column suppression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceConfig {
    pub t_mp: u8,
    pub t_spatter: u8,
    /// Minimum number of vertically aligned spots that make a flare column.
    pub flare_min_spots: usize,
    /// Horizontal tolerance for "same column", pixels.
    pub flare_tol_x: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            t_mp: 200,
            t_spatter: 60,
            flare_min_spots: 3,
            flare_tol_x: 1.5,
        }
    }
}

/// Marks spatter pixels that are 8-adjacent to the melt pool.
pub(crate) fn touches_class(lm: &LabelMap, x: usize, y: usize, class: Class) -> bool {
    Connectivity::Eight.offsets().iter().any(|&(dx, dy)| {
        let nx = x as isize + dx;
        let ny = y as isize + dy;
        nx >= 0 && ny >= 0 && (nx as usize) < lm.width && (ny as usize) < lm.height && lm.get(nx as usize, ny as usize) == class
    })
}

/// Threshold labels with flare suppression: a spatter component whose
/// centroid shares its column (within `flare_tol_x`) with at least
/// `flare_min_spots - 1` other spatter components is relabeled background.
/// Components attached to the melt pool do not vote.
pub fn reference_segment(frame: &Frame, cfg: &ReferenceConfig) -> Result<LabelMap, SegmentationError> {
    let mut lm = threshold_segment(frame, cfg.t_mp, cfg.t_spatter)?;
    let comps = connected_components(&lm.mask(Class::Spatter), Connectivity::Eight);
    let n = comps.components.len();
    let mut attached = vec![false; n];
    for y in 0..lm.height {
        for x in 0..lm.width {
            let l = comps.labels[y * lm.width + x];
            if l != 0 && !attached[l as usize - 1] && touches_class(&lm, x, y, Class::MeltPool) {
                attached[l as usize - 1] = true;
            }
        }
    }
    let need = cfg.flare_min_spots.saturating_sub(1);
    let mut suppress = vec![false; n];
    for i in 0..n {
        if attached[i] {
            continue;
        }
        let xi = comps.components[i].centroid[0];
        let aligned = (0..n)
            .filter(|&j| j != i && !attached[j] && math::abs(comps.components[j].centroid[0] - xi) <= cfg.flare_tol_x)
            .count();
        suppress[i] = aligned >= need && need > 0;
    }
    if suppress.iter().any(|&s| s) {
        for (idx, &l) in comps.labels.iter().enumerate() {
            if l != 0 && suppress[l as usize - 1] {
                lm.labels[idx] = Class::Background;
            }
        }
    }
    Ok(lm)
}

impl Segmenter for ReferenceConfig {
    fn segment(&self, frame: &Frame) -> Result<LabelMap, SegmentationError> {
        reference_segment(frame, self)
    }
}

/// Intensity K-means baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansSegmenter {
    pub k: usize,
}

impl Segmenter for KMeansSegmenter {
    fn segment(&self, frame: &Frame) -> Result<LabelMap, SegmentationError> {
        kmeans_segment(frame, self.k)
    }
}

/// Result of 1-D intensity K-means over the frame histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansClusters {
    /// Cluster means in ascending order.
    pub means: Vec<f64>,
    /// Cluster index (into `means`) for each intensity level 0..=255.
    pub level_cluster: [u8; 256],
}

/// Lloyd iterations on the intensity histogram. Centroids start at the
/// `(k + 0.5) / K` quantiles of the sorted distinct intensity levels, so the
/// result depends only on the histogram.
pub fn kmeans_intensity(frame: &Frame, k: usize) -> Result<KMeansClusters, SegmentationError> {
    let mut hist = [0u64; 256];
    for &v in &frame.pixels {
        hist[v as usize] += 1;
    }
    let levels: Vec<usize> = (0..256).filter(|&l| hist[l] > 0).collect();
    if levels.len() < k {
        return Err(SegmentationError::DegenerateInput {
            k,
            found: levels.len(),
        });
    }
    let mut means: Vec<f64> = (0..k)
        .map(|c| levels[((2 * c + 1) * levels.len()) / (2 * k)] as f64)
        .collect();
    let mut assign = [0u8; 256];
    for _ in 0..200 {
        let mut changed = false;
        for &l in &levels {
            let best = nearest(&means, l as f64);
            if assign[l] != best {
                assign[l] = best;
                changed = true;
            }
        }
        let mut sum = vec![0.0f64; k];
        let mut cnt = vec![0u64; k];
        for &l in &levels {
            let c = assign[l] as usize;
            sum[c] += l as f64 * hist[l] as f64;
            cnt[c] += hist[l];
        }
        for c in 0..k {
            if cnt[c] > 0 {
                means[c] = sum[c] / cnt[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]));
    let mut rank = vec![0u8; k];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r as u8;
    }
    let mut level_cluster = [0u8; 256];
    for l in 0..256 {
        level_cluster[l] = rank[nearest(&means, l as f64) as usize];
    }
    Ok(KMeansClusters {
        means: order.iter().map(|&c| means[c]).collect(),
        level_cluster,
    })
}

fn nearest(means: &[f64], v: f64) -> u8 {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (i, &m) in means.iter().enumerate() {
        let d = math::abs(v - m);
        if d < bd {
            bd = d;
            best = i;
        }
    }
    best as u8
}

/// K-means baseline with `k` in {3, 4}: the brightest cluster is melt pool,
/// the darkest background, everything in between spatter.
pub fn kmeans_segment(frame: &Frame, k: usize) -> Result<LabelMap, SegmentationError> {
    if k != 3 && k != 4 {
        return Err(SegmentationError::UnsupportedK(k));
    }
    let km = kmeans_intensity(frame, k)?;
    let class_of = |r: u8| match r as usize {
        0 => Class::Background,
        r if r == k - 1 => Class::MeltPool,
        _ => Class::Spatter,
    };
    let labels = frame.pixels.iter().map(|&v| class_of(km.level_cluster[v as usize])).collect();
    Ok(LabelMap::from_classes(frame.width, frame.height, labels))
}

/// Per-pixel class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities {
    width: usize,
    height: usize,
    probs: Vec<[f64; Class::COUNT]>,
}

impl ClassProbabilities {
    pub fn new(width: usize, height: usize, probs: Vec<[f64; Class::COUNT]>) -> Result<Self, SegmentationError> {
        if probs.len() != width * height {
            return Err(SegmentationError::BufferSize {
                expected: width * height,
                actual: probs.len(),
            });
        }
        for (index, p) in probs.iter().enumerate() {
            let s: f64 = p.iter().sum();
            if p.iter().any(|&v| !(v >= 0.0)) || math::abs(s - 1.0) > 1e-9 {
                return Err(SegmentationError::InvalidProbabilities { index });
            }
        }
        Ok(Self { width, height, probs })
    }

    /// Hard labels as one-hot distributions.
    pub fn one_hot(lm: &LabelMap) -> Self {
        let probs = lm
            .labels
            .iter()
            .map(|&c| {
                let mut p = [0.0; Class::COUNT];
                p[c as usize] = 1.0;
                p
            })
            .collect();
        Self {
            width: lm.width,
            height: lm.height,
            probs,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn probs(&self) -> &[[f64; Class::COUNT]] {
        &self.probs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEntropy {
    /// Mean natural-log loss over pixels; `+inf` when any pixel gives its
    /// true class probability zero.
    pub mean: f64,
    /// Pixels whose true class had probability zero.
    pub zero_prob_pixels: usize,
}

/// Mean per-pixel cross-entropy against one-hot ground truth.
pub fn cross_entropy(pred: &ClassProbabilities, truth: &LabelMap) -> Result<CrossEntropy, SegmentationError> {
    truth.check_dims(pred.width, pred.height)?;
    let mut sum = 0.0;
    let mut zero = 0;
    for (p, &c) in pred.probs.iter().zip(truth.labels.iter()) {
        let q = p[c as usize];
        if q <= 0.0 {
            zero += 1;
        } else {
            sum -= math::ln(q);
        }
    }
    let n = truth.labels.len();
    let mean = if zero > 0 {
        f64::INFINITY
    } else if n == 0 {
        0.0
    } else {
        sum / n as f64
    };
    Ok(CrossEntropy {
        mean,
        zero_prob_pixels: zero,
    })
}

/// Fraction of pixels whose labels agree.
pub fn pixel_accuracy(pred: &LabelMap, truth: &LabelMap) -> Result<f64, SegmentationError> {
    truth.check_dims(pred.width, pred.height)?;
    if truth.labels.is_empty() {
        return Ok(1.0);
    }
    let same = pred.labels.iter().zip(truth.labels.iter()).filter(|(a, b)| a == b).count();
    Ok(same as f64 / truth.labels.len() as f64)
}

/// 1-D dilated kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct DilatedKernel {
    pub weights: Vec<f64>,
    pub rate: usize,
}

impl DilatedKernel {
    pub fn new(weights: Vec<f64>, rate: usize) -> Result<Self, SegmentationError> {
        if rate == 0 {
            return Err(SegmentationError::InvalidKernel("rate must be >= 1"));
        }
        if weights.is_empty() {
            return Err(SegmentationError::InvalidKernel("empty kernel"));
        }
        Ok(Self { weights, rate })
    }

    fn span(&self) -> usize {
        self.rate * (self.weights.len() - 1) + 1
    }
}

/// Valid-mode dilated correlation `y_i = Σ_k x[i + r·k] · w[k]`.
pub fn dilated_conv(x: &[f64], kern: &DilatedKernel) -> Result<Vec<f64>, SegmentationError> {
    let span = kern.span();
    if x.len() < span {
        return Err(SegmentationError::InputTooShort { len: x.len(), span });
    }
    Ok((0..=x.len() - span)
        .map(|i| kern.weights.iter().enumerate().map(|(k, w)| x[i + kern.rate * k] * w).sum())
        .collect())
}

/// 2-D dilated kernel, weights row-major `rows × cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct DilatedKernel2d {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub rate: usize,
}

impl DilatedKernel2d {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, rate: usize) -> Result<Self, SegmentationError> {
        if rate == 0 {
            return Err(SegmentationError::InvalidKernel("rate must be >= 1"));
        }
        if rows == 0 || cols == 0 || weights.len() != rows * cols {
            return Err(SegmentationError::InvalidKernel("weights do not match extents"));
        }
        Ok(Self {
            rows,
            cols,
            weights,
            rate,
        })
    }
}

/// Valid-mode 2-D dilated correlation over a row-major `height × width`
/// array. Returns `(out_width, out_height, values)`.
pub fn dilated_conv2d(
    x: &[f64],
    width: usize,
    height: usize,
    kern: &DilatedKernel2d,
) -> Result<(usize, usize, Vec<f64>), SegmentationError> {
    if x.len() != width * height {
        return Err(SegmentationError::BufferSize {
            expected: width * height,
            actual: x.len(),
        });
    }
    let span_y = kern.rate * (kern.rows - 1) + 1;
    let span_x = kern.rate * (kern.cols - 1) + 1;
    if height < span_y || width < span_x {
        return Err(SegmentationError::InputTooShort {
            len: width.min(height),
            span: span_x.max(span_y),
        });
    }
    let (ow, oh) = (width - span_x + 1, height - span_y + 1);
    let mut out = Vec::with_capacity(ow * oh);
    for i in 0..oh {
        for j in 0..ow {
            let mut s = 0.0;
            for a in 0..kern.rows {
                for b in 0..kern.cols {
                    s += x[(i + kern.rate * a) * width + j + kern.rate * b] * kern.weights[a * kern.cols + b];
                }
            }
            out.push(s);
        }
    }
    Ok((ow, oh, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    #[test]
    fn labelmap_validation() {
        let lm = LabelMap::from_raw(4, 4, &[0; 16]).unwrap();
        assert_eq!(lm.count(Class::Background), 16);
        let mut raw = [0u8; 16];
        raw[5] = 3;
        assert_eq!(
            LabelMap::from_raw(4, 4, &raw),
            Err(SegmentationError::InvalidClass { index: 5, value: 3 })
        );
        assert!(LabelMap::from_raw(4, 3, &[0; 16]).is_err());
        assert!(lm.check_dims(4, 5).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let truth = LabelMap::from_raw(2, 2, &[0, 1, 2, 1]).unwrap();
        let exact = ClassProbabilities::one_hot(&truth);
        assert_eq!(cross_entropy(&exact, &truth).unwrap().mean, 0.0);

        let third = 1.0 / 3.0;
        let uniform = ClassProbabilities::new(2, 2, vec![[third; 3]; 4]).unwrap();
        let ce = cross_entropy(&uniform, &truth).unwrap().mean;
        assert!((ce - 3f64.ln()).abs() < 1e-12);

        let one = LabelMap::from_raw(1, 1, &[0]).unwrap();
        let p = ClassProbabilities::new(1, 1, vec![[0.7, 0.2, 0.1]]).unwrap();
        assert!((cross_entropy(&p, &one).unwrap().mean - 0.356675).abs() < 1e-6);

        let wrong = ClassProbabilities::new(1, 1, vec![[0.0, 0.5, 0.5]]).unwrap();
        let ce = cross_entropy(&wrong, &one).unwrap();
        assert!(ce.mean.is_infinite());
        assert_eq!(ce.zero_prob_pixels, 1);

        assert!(ClassProbabilities::new(1, 1, vec![[0.5, 0.6, -0.1]]).is_err());
        assert!(ClassProbabilities::new(1, 1, vec![[0.5, 0.4, 0.0]]).is_err());
    }

    #[test]
    fn cross_entropy_monotone_toward_truth() {
        let truth = LabelMap::from_raw(1, 1, &[1]).unwrap();
        let mut last = f64::INFINITY;
        for step in 1..=99 {
            let q = step as f64 / 100.0;
            let rest = (1.0 - q) / 2.0;
            let p = ClassProbabilities::new(1, 1, vec![[rest, q, rest]]).unwrap();
            let ce = cross_entropy(&p, &truth).unwrap().mean;
            assert!(ce >= 0.0 && ce < last);
            last = ce;
        }
    }

    #[test]
    fn accuracy_cases() {
        let a = LabelMap::from_raw(2, 2, &[0, 1, 2, 0]).unwrap();
        let b = LabelMap::from_raw(2, 2, &[1, 2, 0, 1]).unwrap();
        let c = LabelMap::from_raw(2, 2, &[0, 1, 2, 2]).unwrap();
        assert_eq!(pixel_accuracy(&a, &a).unwrap(), 1.0);
        assert_eq!(pixel_accuracy(&a, &b).unwrap(), 0.0);
        assert_eq!(pixel_accuracy(&a, &c).unwrap(), 0.75);
        assert!(pixel_accuracy(&a, &LabelMap::new(3, 2)).is_err());
    }

    #[test]
    fn dilated_conv_examples() {
        let x: Vec<f64> = (1..=7).map(f64::from).collect();
        let delta = DilatedKernel::new(vec![0.0, 1.0, 0.0], 1).unwrap();
        assert_eq!(dilated_conv(&x, &delta).unwrap(), x[1..6].to_vec());
        let k = DilatedKernel::new(vec![1.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(dilated_conv(&[1.0, 2.0, 3.0, 4.0, 5.0], &k).unwrap(), vec![9.0]);
        assert_eq!(
            dilated_conv(&[1.0, 2.0, 3.0, 4.0], &k),
            Err(SegmentationError::InputTooShort { len: 4, span: 5 })
        );
        assert!(DilatedKernel::new(vec![1.0], 0).is_err());
    }

    fn naive_conv(x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut out = vec![];
        let mut i = 0;
        while i + w.len() <= x.len() {
            let mut s = 0.0;
            for k in 0..w.len() {
                s += x[i + k] * w[k];
            }
            out.push(s);
            i += 1;
        }
        out
    }

    #[test]
    fn rate_one_matches_naive_loop() {
        let mut g = SplitMix64::new(11);
        for _ in 0..100 {
            let n = 5 + (g.next_u64() % 60) as usize;
            let k = 1 + (g.next_u64() % 5) as usize;
            let x: Vec<f64> = (0..n).map(|_| g.uniform(-1.0, 1.0)).collect();
            let w: Vec<f64> = (0..k).map(|_| g.uniform(-1.0, 1.0)).collect();
            let kern = DilatedKernel::new(w.clone(), 1).unwrap();
            assert_eq!(dilated_conv(&x, &kern).unwrap(), naive_conv(&x, &w));
        }
    }

    #[test]
    fn conv2d_dilated() {
        // 5×5 ramp, 2×2 ones kernel at rate 2 sums corners of 3×3 windows.
        let x: Vec<f64> = (0..25).map(f64::from).collect();
        let k = DilatedKernel2d::new(2, 2, vec![1.0; 4], 2).unwrap();
        let (ow, oh, y) = dilated_conv2d(&x, 5, 5, &k).unwrap();
        assert_eq!((ow, oh), (3, 3));
        assert_eq!(y[0], 0.0 + 2.0 + 10.0 + 12.0);
        assert_eq!(y[8], 12.0 + 14.0 + 22.0 + 24.0);
        assert!(dilated_conv2d(&x, 5, 5, &DilatedKernel2d::new(3, 3, vec![1.0; 9], 3).unwrap()).is_err());
    }

    fn frame_from(levels: &[u8], w: usize) -> Frame {
        Frame::new(w, levels.len() / w, levels.to_vec()).unwrap()
    }

    #[test]
    fn kmeans_three_levels() {
        let f = frame_from(&[0, 0, 120, 255, 0, 120, 0, 0, 255], 3);
        let lm = kmeans_segment(&f, 3).unwrap();
        for (v, c) in f.pixels.iter().zip(lm.labels()) {
            let want = match v {
                0 => Class::Background,
                120 => Class::Spatter,
                _ => Class::MeltPool,
            };
            assert_eq!(*c, want);
        }
        let f4 = frame_from(&[0, 60, 120, 255, 0, 0], 3);
        let lm = kmeans_segment(&f4, 4).unwrap();
        assert_eq!(lm.labels()[1], Class::Spatter);
        assert_eq!(lm.labels()[2], Class::Spatter);
        assert_eq!(lm.labels()[3], Class::MeltPool);
    }

    #[test]
    fn kmeans_degenerate_and_bad_k() {
        let f = frame_from(&[7; 9], 3);
        assert_eq!(
            kmeans_segment(&f, 3),
            Err(SegmentationError::DegenerateInput { k: 3, found: 1 })
        );
        assert_eq!(kmeans_segment(&f, 5), Err(SegmentationError::UnsupportedK(5)));
    }

    #[test]
    fn reference_on_blank_frame() {
        let f = Frame::zeros(16, 16);
        let lm = reference_segment(&f, &ReferenceConfig::default()).unwrap();
        assert_eq!(lm.count(Class::Background), 256);
    }

    #[test]
    fn reference_suppresses_flare_column() {
        let mut f = Frame::zeros(40, 60);
        // four 3×3 spots stacked at x = 30
        for k in 0..4 {
            for dy in 0..3 {
                for dx in 0..3 {
                    f.set(29 + dx, 5 + 12 * k + dy, 120);
                }
            }
        }
        // one real spatter elsewhere
        for dy in 0..2 {
            for dx in 0..2 {
                f.set(8 + dx, 20 + dy, 140);
            }
        }
        let raw = threshold_segment(&f, 200, 60).unwrap();
        assert_eq!(raw.count(Class::Spatter), 36 + 4);
        let lm = reference_segment(&f, &ReferenceConfig::default()).unwrap();
        assert_eq!(lm.count(Class::Spatter), 4);
    }

    proptest! {
        #[test]
        fn kmeans_ignores_pixel_order(
            mut px in proptest::collection::vec(any::<u8>(), 16..64),
            seed in any::<u64>(),
        ) {
            let w = px.len();
            let f = Frame::new(w, 1, px.clone()).unwrap();
            let a = kmeans_segment(&f, 3);
            let mut g = SplitMix64::new(seed);
            for i in (1..px.len()).rev() {
                let j = (g.next_u64() % (i as u64 + 1)) as usize;
                px.swap(i, j);
            }
            let f2 = Frame::new(w, 1, px.clone()).unwrap();
            let b = kmeans_segment(&f2, 3);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    for (i, v) in f2.pixels.iter().enumerate() {
                        let j = f.pixels.iter().position(|u| u == v).unwrap();
                        prop_assert_eq!(b.labels()[i], a.labels()[j]);
                    }
                }
                (Err(x), Err(y)) => prop_assert_eq!(x, y),
                _ => prop_assert!(false, "one ordering failed"),
            }
        }

        #[test]
        fn cross_entropy_nonnegative(p in proptest::collection::vec((0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0), 4), t in proptest::collection::vec(0u8..3, 4)) {
            let probs: Vec<[f64; 3]> = p.iter().map(|&(a, b, c)| { let s = a + b + c; [a / s, b / s, c / s] }).collect();
            let cp = ClassProbabilities::new(2, 2, probs).unwrap();
            let truth = LabelMap::from_raw(2, 2, &t).unwrap();
            prop_assert!(cross_entropy(&cp, &truth).unwrap().mean > 0.0);
        }
    }
}
