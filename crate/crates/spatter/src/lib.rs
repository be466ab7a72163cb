//! Files, formats and the `spatter` command line around `spatter-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod pgm;
pub mod raster;
pub mod records;
pub mod report;
pub mod util;
