//! Sensor networks, observation matrices and their on-disk formats.

mod io;
pub mod matrix;
mod synth;

use std::collections::HashSet;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{expanded_hull, BBox, Point, Polygon};

pub use io::{load_boundary, load_network, load_observations, save_boundary, save_network, save_observations_csv};
pub use synth::{synthesize, BumpField, SynthConfig, Synthetic};

/// Fraction of the hull's bounding-box diagonal used to grow a default boundary.
pub const HULL_EXPANSION: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Original,
    Virtual,
}

impl SensorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SensorKind::Original => "original",
            SensorKind::Virtual => "virtual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    pub id: String,
    pub lng: f64,
    pub lat: f64,
    pub kind: SensorKind,
}

impl Sensor {
    pub fn original(id: impl Into<String>, lng: f64, lat: f64) -> Self {
        Self {
            id: id.into(),
            lng,
            lat,
            kind: SensorKind::Original,
        }
    }

    pub fn position(&self) -> Point {
        Point::new(self.lng, self.lat)
    }

    pub fn is_original(&self) -> bool {
        self.kind == SensorKind::Original
    }
}

/// Validated set of sensors plus the polygon bounding the study domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorNetwork {
    sensors: Vec<Sensor>,
    boundary: Polygon,
}

impl SensorNetwork {
    pub fn new(sensors: Vec<Sensor>, boundary: Polygon) -> Result<Self> {
        let mut seen = HashSet::with_capacity(sensors.len());
        for s in &sensors {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
            check_coordinate(&s.id, s.lng, s.lat)?;
        }
        if boundary.len() < 3 || boundary.area() <= 0.0 {
            return Err(Error::DegenerateDomain(
                "boundary polygon needs at least three vertices and positive area".into(),
            ));
        }
        for s in &sensors {
            if !boundary.contains(s.position()) {
                return Err(Error::OutsideBoundary(s.id.clone()));
            }
        }
        Ok(Self { sensors, boundary })
    }

    /// Network whose boundary is the sensors' convex hull grown by 2% of its diagonal.
    pub fn with_default_boundary(sensors: Vec<Sensor>) -> Result<Self> {
        for s in &sensors {
            check_coordinate(&s.id, s.lng, s.lat)?;
        }
        let pts: Vec<Point> = sensors.iter().map(Sensor::position).collect();
        let boundary = expanded_hull(&pts, HULL_EXPANSION)?;
        Self::new(sensors, boundary)
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    pub fn boundary(&self) -> &Polygon {
        &self.boundary
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn positions(&self) -> Vec<Point> {
        self.sensors.iter().map(Sensor::position).collect()
    }

    pub fn bounds(&self) -> BBox {
        self.boundary.bbox()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.sensors.iter().position(|s| s.id == id)
    }

    pub fn original_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.sensors[i].is_original()).collect()
    }

    pub fn count_original(&self) -> usize {
        self.sensors.iter().filter(|s| s.is_original()).count()
    }

    /// Sub-network made of the listed sensors, in the listed order.
    pub fn subset(&self, indices: &[usize]) -> SensorNetwork {
        SensorNetwork {
            sensors: indices.iter().map(|&i| self.sensors[i].clone()).collect(),
            boundary: self.boundary.clone(),
        }
    }

    /// Append virtual sensors; positions must lie inside the boundary.
    pub fn with_virtual(&self, points: &[Point]) -> Result<SensorNetwork> {
        let mut sensors = self.sensors.clone();
        let taken: HashSet<&str> = self.sensors.iter().map(|s| s.id.as_str()).collect();
        let mut next = 0usize;
        for p in points {
            let id = loop {
                next += 1;
                let candidate = format!("virtual-{next:04}");
                if !taken.contains(candidate.as_str()) {
                    break candidate;
                }
            };
            sensors.push(Sensor {
                id,
                lng: p.x,
                lat: p.y,
                kind: SensorKind::Virtual,
            });
        }
        SensorNetwork::new(sensors, self.boundary.clone())
    }

    /// Same sensors in a new order (`order[k]` is the old index placed at k).
    pub fn permuted(&self, order: &[usize]) -> SensorNetwork {
        self.subset(order)
    }
}

fn check_coordinate(id: &str, lng: f64, lat: f64) -> Result<()> {
    if !lng.is_finite() || !lat.is_finite() || !(-180.0..=180.0).contains(&lng) || !(-90.0..=90.0).contains(&lat) {
        return Err(Error::CoordinateRange {
            id: id.to_string(),
            lng,
            lat,
        });
    }
    Ok(())
}

/// n×t readings with a validity mask. Missing entries hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    n: usize,
    t: usize,
    values: Vec<f32>,
    mask: Vec<bool>,
    time_step: f64,
    start: NaiveDateTime,
}

impl ObservationSeries {
    pub fn new(
        n: usize,
        t: usize,
        mut values: Vec<f32>,
        mask: Vec<bool>,
        time_step: f64,
        start: NaiveDateTime,
    ) -> Result<Self> {
        if values.len() != n * t || mask.len() != n * t {
            return Err(Error::Shape(format!(
                "observation buffers have {} values / {} mask entries, expected {}",
                values.len(),
                mask.len(),
                n * t
            )));
        }
        for (v, &m) in values.iter_mut().zip(&mask) {
            if !m {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::Shape("observed value is not finite".into()));
            }
        }
        Ok(Self {
            n,
            t,
            values,
            mask,
            time_step,
            start,
        })
    }

    /// Fully observed series from a row-major matrix.
    pub fn dense(n: usize, t: usize, values: Vec<f32>, time_step: f64, start: NaiveDateTime) -> Result<Self> {
        let mask = vec![true; values.len()];
        Self::new(n, t, values, mask, time_step, start)
    }

    pub fn n_sensors(&self) -> usize {
        self.n
    }

    pub fn n_steps(&self) -> usize {
        self.t
    }

    pub fn time_step(&self) -> f64 {
        self.time_step
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn value(&self, sensor: usize, step: usize) -> f32 {
        self.values[sensor * self.t + step]
    }

    pub fn is_observed(&self, sensor: usize, step: usize) -> bool {
        self.mask[sensor * self.t + step]
    }

    pub fn row(&self, sensor: usize) -> &[f32] {
        &self.values[sensor * self.t..(sensor + 1) * self.t]
    }

    pub fn row_mask(&self, sensor: usize) -> &[bool] {
        &self.mask[sensor * self.t..(sensor + 1) * self.t]
    }

    pub fn set(&mut self, sensor: usize, step: usize, value: f32) {
        let i = sensor * self.t + step;
        self.values[i] = value;
        self.mask[i] = true;
    }

    pub fn clear(&mut self, sensor: usize, step: usize) {
        let i = sensor * self.t + step;
        self.values[i] = 0.0;
        self.mask[i] = false;
    }

    /// Hide whole sensor rows.
    pub fn with_rows_hidden(&self, rows: &[usize]) -> Self {
        let mut out = self.clone();
        for &r in rows {
            for s in 0..self.t {
                out.clear(r, s);
            }
        }
        out
    }

    /// Append `count` all-missing rows.
    pub fn with_empty_rows(&self, count: usize) -> Self {
        let mut out = self.clone();
        out.values.extend(std::iter::repeat_n(0.0, count * self.t));
        out.mask.extend(std::iter::repeat_n(false, count * self.t));
        out.n += count;
        out
    }

    /// Rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.t);
        let mut mask = Vec::with_capacity(rows.len() * self.t);
        for &r in rows {
            values.extend_from_slice(self.row(r));
            mask.extend_from_slice(self.row_mask(r));
        }
        Self {
            n: rows.len(),
            t: self.t,
            values,
            mask,
            time_step: self.time_step,
            start: self.start,
        }
    }

    /// Columns `range`, keeping the time origin consistent.
    pub fn select_steps(&self, range: std::ops::Range<usize>) -> Self {
        let len = range.len();
        let mut values = Vec::with_capacity(self.n * len);
        let mut mask = Vec::with_capacity(self.n * len);
        for r in 0..self.n {
            values.extend_from_slice(&self.row(r)[range.clone()]);
            mask.extend_from_slice(&self.row_mask(r)[range.clone()]);
        }
        Self {
            n: self.n,
            t: len,
            values,
            mask,
            time_step: self.time_step,
            start: self.timestamp(range.start),
        }
    }

    /// Every `factor`-th column starting at 0.
    pub fn downsample(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        let t = self.t.div_ceil(factor);
        let mut values = Vec::with_capacity(self.n * t);
        let mut mask = Vec::with_capacity(self.n * t);
        for r in 0..self.n {
            for s in (0..self.t).step_by(factor) {
                values.push(self.value(r, s));
                mask.push(self.is_observed(r, s));
            }
        }
        Self {
            n: self.n,
            t,
            values,
            mask,
            time_step: self.time_step * factor as f64,
            start: self.start,
        }
    }

    pub fn timestamp(&self, step: usize) -> NaiveDateTime {
        let ms = (self.time_step * 1000.0 * step as f64).round() as i64;
        self.start + chrono::Duration::milliseconds(ms)
    }

    pub(crate) fn with_time(mut self, time_step: f64, start: NaiveDateTime) -> Self {
        self.time_step = time_step;
        self.start = start;
        self
    }

    /// Save as `header.json` + `data.bin` + `mask.bin` under `dir`.
    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        let header = matrix::MatrixHeader::new(vec![self.n, self.t])
            .with_time_step(self.time_step)
            .with_extra("start", serde_json::Value::String(format_timestamp(self.start)));
        matrix::write_matrix(dir, &header, &self.values)?;
        matrix::write_mask(dir, &self.mask)
    }

    pub fn load(dir: &std::path::Path) -> Result<Self> {
        let (header, values) = matrix::read_matrix(dir)?;
        let [n, t] = header.shape2(dir)?;
        let mask = matrix::read_mask(dir, n * t)?;
        let start = header
            .extra
            .get("start")
            .and_then(|v| v.as_str())
            .map(|s| parse_timestamp(s).ok_or_else(|| Error::format(dir, format!("bad start timestamp {s:?}"))))
            .transpose()?
            .unwrap_or_default();
        let time_step = header.time_step.unwrap_or(1.0);
        Self::new(n, t, values, mask, time_step, start)
    }
}

pub(crate) fn format_timestamp(ts: NaiveDateTime) -> String {
    if ts.and_utc().timestamp_subsec_millis() == 0 {
        ts.format("%Y-%m-%dT%H:%M:%S").to_string()
    } else {
        ts.format("%Y-%m-%dT%H:%M:%S%.3f").to_string()
    }
}

/// Parse an ISO-8601 timestamp. Offsets are converted to UTC; naive stamps are kept as-is.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt);
        }
    }
    chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}
