//! Binary PGM (P5) reader and writer, 8- and 16-bit.

use std::fs;
use std::path::{Path, PathBuf};

use spatter_core::segmentation::LabelMap;
use spatter_core::Frame;

use crate::error::FormatError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major samples, each `<= maxval`.
    pub data: Vec<u16>,
}

fn bad(path: &Path, msg: impl Into<String>) -> FormatError {
    FormatError::Malformed {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Header tokens, skipping whitespace and `#` comments. Returns the token
/// and the offset just past it.
fn token(bytes: &[u8], mut i: usize) -> Option<(&[u8], usize)> {
    loop {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        break;
    }
    let start = i;
    while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'#' {
        i += 1;
    }
    (i > start).then(|| (&bytes[start..i], i))
}

pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<Pgm, FormatError> {
    let (magic, i) = token(bytes, 0).ok_or_else(|| bad(path, "empty file"))?;
    if magic != b"P5" {
        return Err(bad(path, "not a binary PGM (expected P5)"));
    }
    let mut i = i;
    let mut nums = [0usize; 3];
    for (k, name) in ["width", "height", "maxval"].iter().enumerate() {
        let (t, j) = token(bytes, i).ok_or_else(|| bad(path, format!("missing {name}")))?;
        nums[k] = std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(path, format!("invalid {name}")))?;
        i = j;
    }
    let [width, height, maxval] = nums;
    if width == 0 || height == 0 {
        return Err(bad(path, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad(path, format!("maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates header and raster
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(bad(path, "truncated header"));
    }
    let raster = &bytes[i + 1..];
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(bps))
        .ok_or_else(|| bad(path, "dimensions overflow"))?;
    if raster.len() != need {
        return Err(bad(path, format!("raster has {} bytes, expected {need}", raster.len())));
    }
    let data: Vec<u16> = if bps == 1 {
        raster.iter().map(|&b| b as u16).collect()
    } else {
        raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    if let Some(v) = data.iter().find(|&&v| v as usize > maxval) {
        return Err(bad(path, format!("sample {v} exceeds maxval {maxval}")));
    }
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        data,
    })
}

pub fn read_pgm(path: &Path) -> Result<Pgm, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    parse_pgm(&bytes, path)
}

pub fn encode_pgm(p: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", p.width, p.height, p.maxval).into_bytes();
    if p.maxval < 256 {
        out.extend(p.data.iter().map(|&v| v as u8));
    } else {
        for v in &p.data {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

pub fn write_pgm(path: &Path, p: &Pgm) -> Result<(), FormatError> {
    fs::write(path, encode_pgm(p)).map_err(|e| FormatError::io(path, e))
}

pub fn write_gray8(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<(), FormatError> {
    write_pgm(
        path,
        &Pgm {
            width,
            height,
            maxval: 255,
            data: pixels.iter().map(|&v| v as u16).collect(),
        },
    )
}

pub fn read_frame(path: &Path) -> Result<Frame, FormatError> {
    let p = read_pgm(path)?;
    if p.maxval != 255 {
        return Err(bad(path, format!("frames must be 8-bit (maxval 255), got {}", p.maxval)));
    }
    Frame::new(p.width, p.height, p.data.iter().map(|&v| v as u8).collect()).map_err(|e| bad(path, e.to_string()))
}

pub fn write_label_map(path: &Path, lm: &LabelMap) -> Result<(), FormatError> {
    write_gray8(path, lm.width(), lm.height(), &lm.to_raw())
}

pub fn read_label_map(path: &Path) -> Result<LabelMap, FormatError> {
    let p = read_pgm(path)?;
    if p.maxval > 255 {
        return Err(bad(path, "label maps must be 8-bit"));
    }
    let raw: Vec<u8> = p.data.iter().map(|&v| v as u8).collect();
    LabelMap::from_raw(p.width, p.height, &raw).map_err(|e| bad(path, e.to_string()))
}

/// Fringe intensities on the 0–255 scale stored at 16 bits.
pub fn write_intensity16(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<(), FormatError> {
    let data = values
        .iter()
        .map(|&v| (v.clamp(0.0, 255.0) * (65535.0 / 255.0)).round() as u16)
        .collect();
    write_pgm(
        path,
        &Pgm {
            width,
            height,
            maxval: 65535,
            data,
        },
    )
}

/// Intensities on the 0–255 scale from an 8- or 16-bit PGM.
pub fn read_intensity(path: &Path) -> Result<(usize, usize, Vec<f64>), FormatError> {
    let p = read_pgm(path)?;
    let k = 255.0 / p.maxval as f64;
    Ok((p.width, p.height, p.data.iter().map(|&v| v as f64 * k).collect()))
}

/// `dir/prefix_NNNNNN.ext` for each file matching the pattern, sorted by
/// index.
pub fn indexed_files(dir: &Path, prefix: &str, ext: &str) -> Result<Vec<(u64, PathBuf)>, FormatError> {
    let rd = match fs::read_dir(dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(FormatError::io(dir, e)),
    };
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| FormatError::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(stem) = name.strip_prefix(prefix).and_then(|s| s.strip_suffix(ext)).and_then(|s| s.strip_suffix('.')) else {
            continue;
        };
        if let Ok(idx) = stem.parse::<u64>() {
            out.push((idx, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}
