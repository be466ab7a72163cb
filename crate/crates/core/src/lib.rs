//! Core algorithms for in-situ laser powder bed fusion (LPBF) monitoring.
//!
//! The crate is `no_std` (it needs `alloc`) and contains no IO. Every
//! routine is a pure function of its inputs, and transcendental functions
//! go through [`libm`] so results are bit-identical across platforms.
//!
//! Pipeline stages:
//!
//! 1. [`process`]: process parameters, energy densities, hatch-angle schedule.
//! 2. [`synth`]: deterministic off-axis camera scenes with ground truth.
//! 3. [`imaging`]: homographies, bilinear warping, connected components, thresholding.
//! 4. [`segmentation`]: label maps, reference and K-means segmenters, metrics.
//! 5. [`registration`]: DBSCAN, melt-pool centers, spatter counts, ejection angles.
//! 6. [`fpp`]: fringe projection profilometry and areal roughness (Sa).
//! 7. [`analytics`]: least-squares fits, prediction metrics, histograms.
//! 8. [`svr`]: epsilon-insensitive support vector regression and model comparison.

#![no_std]
// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analytics;
pub mod fpp;
pub mod imaging;
mod math;
pub mod process;
pub mod registration;
pub mod rng;
pub mod segmentation;
pub mod svr;
pub mod synth;

pub use imaging::{Frame, FrameMeta, Homography};
pub use process::{HatchSchedule, ProcessParameters};
pub use segmentation::{Class, LabelMap};
