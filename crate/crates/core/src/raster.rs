//! Georeferenced raster sequences.

use std::path::Path;

use serde_json::json;

use crate::dataset::matrix::{read_matrix, write_matrix, MatrixHeader};
use crate::error::{Error, Result};
use crate::geometry::{BBox, GridSpec};

pub const NODATA: f32 = -9999.0;

/// `frames` grids of `grid.height × grid.width` values, row 0 at the north edge.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterField {
    pub grid: GridSpec,
    pub frames: usize,
    pub data: Vec<f32>,
    pub nodata: f32,
}

impl RasterField {
    pub fn filled(grid: GridSpec, frames: usize, value: f32) -> Self {
        Self {
            grid,
            frames,
            data: vec![value; grid.len() * frames],
            nodata: NODATA,
        }
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn bounds(&self) -> BBox {
        self.grid.bounds
    }

    pub fn frame(&self, k: usize) -> &[f32] {
        let len = self.grid.len();
        &self.data[k * len..(k + 1) * len]
    }

    pub fn frame_mut(&mut self, k: usize) -> &mut [f32] {
        let len = self.grid.len();
        &mut self.data[k * len..(k + 1) * len]
    }

    pub fn is_valid(&self, v: f32) -> bool {
        v != self.nodata && v.is_finite()
    }

    /// Finite range of one frame, ignoring nodata.
    pub fn frame_range(&self, k: usize) -> Option<(f32, f32)> {
        let mut it = self.frame(k).iter().copied().filter(|&v| self.is_valid(v));
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let b = self.grid.bounds;
        let header = MatrixHeader::new(vec![self.frames, self.grid.height, self.grid.width])
            .with_extra("bounds", json!([b.min_x, b.min_y, b.max_x, b.max_y]))
            .with_extra("nodata", json!(self.nodata));
        write_matrix(dir, &header, &self.data)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (header, data) = read_matrix(dir)?;
        let [frames, height, width] = match header.shape.as_slice() {
            [a, b, c] => [*a, *b, *c],
            other => return Err(Error::format(dir, format!("raster needs a 3-D shape, got {other:?}"))),
        };
        let b: Vec<f64> = header
            .extra
            .get("bounds")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .filter(|b: &Vec<f64>| b.len() == 4)
            .ok_or_else(|| Error::format(dir, "raster header lacks bounds"))?;
        let nodata = header
            .extra
            .get("nodata")
            .and_then(|v| v.as_f64())
            .map(|v| v as f32)
            .unwrap_or(NODATA);
        let bounds = BBox {
            min_x: b[0],
            min_y: b[1],
            max_x: b[2],
            max_y: b[3],
        };
        Ok(Self {
            grid: GridSpec::new(bounds, width, height),
            frames,
            data,
            nodata,
        })
    }
}
