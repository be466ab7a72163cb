//! Column-named CSV tables: feature records and generic numeric columns.

use std::path::Path;

use spatter_core::analytics::LayerFeatureRecord;

use crate::error::FormatError;
use crate::util::num;

pub const FEATURE_COLUMNS: [&str; 11] = [
    "bar_id",
    "layer_index",
    "power_w",
    "speed_mm_s",
    "hatch_space_mm",
    "layer_thickness_mm",
    "ved_j_mm3",
    "hatch_angle_deg",
    "mean_spatter_count",
    "sa_um",
    "z_std_um",
];

/// Columns that may be absent, with their fill value.
const OPTIONAL: [(&str, f64); 2] = [("layer_thickness_mm", 0.04), ("z_std_um", 0.0)];

/// Numeric table with named columns.
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    path: std::path::PathBuf,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| FormatError::malformed(path, e))?;
        let headers = rdr
            .headers()
            .map_err(|e| FormatError::malformed(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| FormatError::malformed(path, e))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self {
            headers,
            rows,
            path: path.to_path_buf(),
        })
    }

    pub fn index(&self, column: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == column)
    }

    pub fn require(&self, column: &str) -> Result<usize, FormatError> {
        self.index(column).ok_or_else(|| FormatError::MissingColumn {
            path: self.path.clone(),
            column: column.to_string(),
        })
    }

    fn parse(&self, row: usize, col: usize) -> Result<f64, FormatError> {
        let s = &self.rows[row][col];
        s.parse().map_err(|_| {
            FormatError::malformed(
                &self.path,
                format!("row {}: column `{}` is not a number: {s:?}", row + 1, self.headers[col]),
            )
        })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, FormatError> {
        let c = self.require(name)?;
        (0..self.rows.len()).map(|r| self.parse(r, c)).collect()
    }
}

pub fn read_features(path: &Path) -> Result<Vec<LayerFeatureRecord>, FormatError> {
    let t = Table::read(path)?;
    let mut cols = [0usize; 11];
    let mut present = [true; 11];
    for (k, name) in FEATURE_COLUMNS.iter().enumerate() {
        match t.index(name) {
            Some(i) => cols[k] = i,
            None if OPTIONAL.iter().any(|(o, _)| o == name) => present[k] = false,
            None => t.require(name).map(|_| ())?,
        }
    }
    let mut out = Vec::with_capacity(t.rows.len());
    for r in 0..t.rows.len() {
        let mut v = [0.0f64; 11];
        for k in 0..11 {
            v[k] = if present[k] {
                t.parse(r, cols[k])?
            } else {
                OPTIONAL.iter().find(|(o, _)| *o == FEATURE_COLUMNS[k]).unwrap().1
            };
        }
        let as_id = |x: f64, name: &str| {
            if x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
                Ok(x as u32)
            } else {
                Err(FormatError::malformed(path, format!("row {}: `{name}` must be a non-negative integer", r + 1)))
            }
        };
        out.push(LayerFeatureRecord {
            bar_id: as_id(v[0], "bar_id")?,
            layer_index: as_id(v[1], "layer_index")?,
            power: v[2],
            speed: v[3],
            hatch_space: v[4],
            layer_thickness: v[5],
            ved: v[6],
            hatch_angle: v[7],
            mean_spatter_count: v[8],
            sa: v[9],
            z_std: v[10],
        });
    }
    Ok(out)
}

pub fn write_features(path: &Path, recs: &[LayerFeatureRecord]) -> Result<(), FormatError> {
    let mut rows = Vec::with_capacity(recs.len());
    for r in recs {
        rows.push(vec![
            r.bar_id.to_string(),
            r.layer_index.to_string(),
            num(r.power),
            num(r.speed),
            num(r.hatch_space),
            num(r.layer_thickness),
            num(r.ved),
            num(r.hatch_angle),
            num(r.mean_spatter_count),
            num(r.sa),
            num(r.z_std),
        ]);
    }
    write_csv(path, &FEATURE_COLUMNS, &rows)
}

pub fn write_csv<S: AsRef<str>>(path: &Path, headers: &[&str], rows: &[Vec<S>]) -> Result<(), FormatError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| FormatError::malformed(path, e))?;
    w.write_record(headers).map_err(|e| FormatError::malformed(path, e))?;
    for r in rows {
        w.write_record(r.iter().map(|s| s.as_ref())).map_err(|e| FormatError::malformed(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}
