use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::FormatError;

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), FormatError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| FormatError::malformed(path, e))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| FormatError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| FormatError::malformed(path, e))
}

pub fn create_dir(path: &Path) -> Result<(), FormatError> {
    fs::create_dir_all(path).map_err(|e| FormatError::io(path, e))
}

/// Shortest decimal that round-trips, so CSV output is stable.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}
