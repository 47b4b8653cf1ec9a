//! Binary matrix format: a directory holding `header.json` and `data.bin`
//! (row-major, 32-bit little-endian IEEE-754), plus an optional `mask.bin`
//! with one byte per entry.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const DTYPE: &str = "float32-le";
pub const HEADER_FILE: &str = "header.json";
pub const DATA_FILE: &str = "data.bin";
pub const MASK_FILE: &str = "mask.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub shape: Vec<usize>,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_step: Option<f64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl MatrixHeader {
    pub fn new(shape: Vec<usize>) -> Self {
        Self {
            shape,
            dtype: DTYPE.to_string(),
            units: None,
            time_step: None,
            extra: Map::new(),
        }
    }

    pub fn with_units(mut self, units: impl Into<String>) -> Self {
        self.units = Some(units.into());
        self
    }

    pub fn with_time_step(mut self, time_step: f64) -> Self {
        self.time_step = Some(time_step);
        self
    }

    pub fn with_extra(mut self, key: &str, value: Value) -> Self {
        self.extra.insert(key.to_string(), value);
        self
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn shape2(&self, path: &Path) -> Result<[usize; 2]> {
        match self.shape.as_slice() {
            [a, b] => Ok([*a, *b]),
            other => Err(Error::format(
                path,
                format!("expected a 2-D matrix, got shape {other:?}"),
            )),
        }
    }
}

pub fn write_matrix(dir: &Path, header: &MatrixHeader, data: &[f32]) -> Result<()> {
    if header.len() != data.len() {
        return Err(Error::Shape(format!(
            "header shape {:?} holds {} values but {} were given",
            header.shape,
            header.len(),
            data.len()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(header).expect("header serializes");
    let hpath = dir.join(HEADER_FILE);
    fs::write(&hpath, json + "\n").map_err(|e| Error::io(&hpath, e))?;
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let dpath = dir.join(DATA_FILE);
    fs::write(&dpath, bytes).map_err(|e| Error::io(&dpath, e))
}

pub fn read_matrix(dir: &Path) -> Result<(MatrixHeader, Vec<f32>)> {
    let hpath = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&hpath).map_err(|e| Error::io(&hpath, e))?;
    let header: MatrixHeader = serde_json::from_str(&text).map_err(|e| Error::format(&hpath, e.to_string()))?;
    if header.dtype != DTYPE {
        return Err(Error::format(&hpath, format!("unsupported dtype {:?}", header.dtype)));
    }
    let dpath = dir.join(DATA_FILE);
    let bytes = fs::read(&dpath).map_err(|e| Error::io(&dpath, e))?;
    if bytes.len() != header.len() * 4 {
        return Err(Error::format(
            &dpath,
            format!("expected {} bytes, found {}", header.len() * 4, bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, data))
}

pub fn write_mask(dir: &Path, mask: &[bool]) -> Result<()> {
    let path = dir.join(MASK_FILE);
    let bytes: Vec<u8> = mask.iter().map(|&m| m as u8).collect();
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

/// Reads `mask.bin`; an absent file means every entry is valid.
pub fn read_mask(dir: &Path, len: usize) -> Result<Vec<bool>> {
    let path = dir.join(MASK_FILE);
    if !path.exists() {
        return Ok(vec![true; len]);
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != len {
        return Err(Error::format(
            &path,
            format!("expected {len} mask bytes, found {}", bytes.len()),
        ));
    }
    Ok(bytes.into_iter().map(|b| b != 0).collect())
}
