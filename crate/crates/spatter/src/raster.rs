//! Height maps as little-endian `f32` rasters with a JSON header.
//! Invalid pixels are stored as NaN.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spatter_core::fpp::HeightMap;

use crate::error::FormatError;
use crate::util::write_json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterHeader {
    pub width: usize,
    pub height: usize,
    pub dtype: String,
    pub unit: String,
    pub data: String,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("f32"))
}

pub fn write_height_map(stem: &Path, h: &HeightMap) -> Result<(), FormatError> {
    let (hdr_path, data_path) = paths(stem);
    let mut bytes = Vec::with_capacity(h.heights.len() * 4);
    for (&v, &ok) in h.heights.iter().zip(&h.valid) {
        let x = if ok { v as f32 } else { f32::NAN };
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(&data_path, bytes).map_err(|e| FormatError::io(&data_path, e))?;
    let hdr = RasterHeader {
        width: h.width,
        height: h.height,
        dtype: "f32le".into(),
        unit: "um".into(),
        data: data_path.file_name().unwrap().to_string_lossy().into_owned(),
    };
    write_json(&hdr_path, &hdr)
}

pub fn read_height_map(stem: &Path) -> Result<HeightMap, FormatError> {
    let (hdr_path, _) = paths(stem);
    let text = fs::read_to_string(&hdr_path).map_err(|e| FormatError::io(&hdr_path, e))?;
    let hdr: RasterHeader = serde_json::from_str(&text).map_err(|e| FormatError::malformed(&hdr_path, e))?;
    if hdr.dtype != "f32le" {
        return Err(FormatError::malformed(&hdr_path, format!("unsupported dtype {}", hdr.dtype)));
    }
    let data_path = hdr_path.with_file_name(&hdr.data);
    let bytes = fs::read(&data_path).map_err(|e| FormatError::io(&data_path, e))?;
    if bytes.len() != hdr.width * hdr.height * 4 {
        return Err(FormatError::malformed(&data_path, "raster size does not match header"));
    }
    let vals: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(HeightMap {
        width: hdr.width,
        height: hdr.height,
        heights: vals.iter().map(|&v| if v.is_nan() { 0.0 } else { v as f64 }).collect(),
        valid: vals.iter().map(|v| !v.is_nan()).collect(),
    })
}
