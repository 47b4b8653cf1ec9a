use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use super::{format_timestamp, parse_timestamp, ObservationSeries, Sensor, SensorKind, SensorNetwork};
use crate::error::{Error, Result};
use crate::geometry::{Point, Polygon};

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file))
}

fn csv_line(err: &csv::Error) -> u64 {
    err.position().map(|p| p.line()).unwrap_or(0)
}

/// Load `id,lng,lat[,kind]` rows. Without a boundary file the boundary is the
/// convex hull of the sensors grown by 2% of its diagonal.
pub fn load_network(sensors_csv: &Path, boundary: Option<&Path>) -> Result<SensorNetwork> {
    let mut reader = csv_reader(sensors_csv)?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(sensors_csv, csv_line(&e), e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (id_col, lng_col, lat_col) = match (col("id"), col("lng"), col("lat")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(parse_err(sensors_csv, 1, "header must contain id,lng,lat")),
    };
    let kind_col = col("kind");

    let mut sensors = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(sensors_csv, csv_line(&e), e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");
        let id = field(id_col).to_string();
        if id.is_empty() {
            return Err(parse_err(sensors_csv, line, "empty sensor id"));
        }
        let lng: f64 = field(lng_col)
            .parse()
            .map_err(|_| parse_err(sensors_csv, line, format!("bad longitude {:?}", field(lng_col))))?;
        let lat: f64 = field(lat_col)
            .parse()
            .map_err(|_| parse_err(sensors_csv, line, format!("bad latitude {:?}", field(lat_col))))?;
        let kind = match kind_col.map(field) {
            None | Some("") | Some("original") => SensorKind::Original,
            Some("virtual") => SensorKind::Virtual,
            Some(other) => return Err(parse_err(sensors_csv, line, format!("unknown kind {other:?}"))),
        };
        sensors.push(Sensor { id, lng, lat, kind });
    }

    match boundary {
        Some(b) => SensorNetwork::new(sensors, load_boundary(b)?),
        None => SensorNetwork::with_default_boundary(sensors),
    }
}

/// Accepts a bare ring `[[lng,lat],...]`, a GeoJSON Polygon, or a Feature wrapping one.
pub fn load_boundary(path: &Path) -> Result<Polygon> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    let ring = find_ring(&value).ok_or_else(|| Error::format(path, "no polygon ring found"))?;
    let mut pts = Vec::with_capacity(ring.len());
    for p in ring {
        let pair = p.as_array().filter(|a| a.len() >= 2);
        let (x, y) = match pair.map(|a| (a[0].as_f64(), a[1].as_f64())) {
            Some((Some(x), Some(y))) => (x, y),
            _ => return Err(Error::format(path, "ring entries must be [lng, lat] pairs")),
        };
        pts.push(Point::new(x, y));
    }
    let poly = Polygon::new(pts);
    if poly.len() < 3 {
        return Err(Error::format(path, "boundary ring needs at least three vertices"));
    }
    Ok(poly)
}

fn find_ring(v: &Value) -> Option<&Vec<Value>> {
    match v {
        Value::Array(items)
            if items
                .first()
                .map(|f| f.is_array() && f.as_array().unwrap().first().is_some_and(Value::is_number))
                .unwrap_or(false) =>
        {
            Some(items)
        }
        Value::Array(items) => items.first().and_then(find_ring),
        Value::Object(map) => map
            .get("coordinates")
            .or_else(|| map.get("geometry"))
            .and_then(find_ring),
        _ => None,
    }
}

pub fn save_boundary(path: &Path, polygon: &Polygon) -> Result<()> {
    let mut ring: Vec<Value> = polygon.ring().iter().map(|p| json!([p.x, p.y])).collect();
    if let Some(first) = ring.first().cloned() {
        ring.push(first);
    }
    let doc = json!({ "type": "Polygon", "coordinates": [ring] });
    let text = serde_json::to_string_pretty(&doc).expect("json") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `sensors.csv` (with a kind column) and `boundary.json` into `dir`.
pub fn save_network(dir: &Path, network: &SensorNetwork) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("sensors.csv");
    let mut out = String::from("id,lng,lat,kind\n");
    for s in network.sensors() {
        out.push_str(&format!("{},{},{},{}\n", s.id, s.lng, s.lat, s.kind.as_str()));
    }
    fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    save_boundary(&dir.join("boundary.json"), network.boundary())
}

/// Wide CSV: first column `id`, remaining headers are uniformly spaced ISO-8601
/// timestamps. Empty cells are missing. Sensors absent from the file are all-missing.
pub fn load_observations(path: &Path, network: &SensorNetwork) -> Result<ObservationSeries> {
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, csv_line(&e), e.to_string()))?
        .clone();
    if headers.len() < 2 {
        return Err(parse_err(path, 1, "need an id column and at least one timestamp"));
    }
    let mut stamps = Vec::with_capacity(headers.len() - 1);
    for (i, h) in headers.iter().enumerate().skip(1) {
        let ts = parse_timestamp(h).ok_or_else(|| parse_err(path, 1, format!("column {i}: bad timestamp {h:?}")))?;
        stamps.push(ts);
    }
    let time_step = if stamps.len() >= 2 {
        let step = stamps[1] - stamps[0];
        if step <= chrono::Duration::zero() {
            return Err(Error::NonUniformSpacing { column: 2 });
        }
        for (k, w) in stamps.windows(2).enumerate() {
            if w[1] - w[0] != step {
                return Err(Error::NonUniformSpacing { column: k + 2 });
            }
        }
        step.num_milliseconds() as f64 / 1000.0
    } else {
        0.0
    };

    let index: HashMap<&str, usize> = network
        .sensors()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let (n, t) = (network.len(), stamps.len());
    let mut values = vec![0f32; n * t];
    let mut mask = vec![false; n * t];
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(path, csv_line(&e), e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let id = record.get(0).unwrap_or("");
        let row = *index.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
        for k in 0..t {
            let cell = record.get(k + 1).unwrap_or("");
            if cell.is_empty() {
                continue;
            }
            let v: f32 = cell
                .parse()
                .ok()
                .filter(|v: &f32| v.is_finite())
                .ok_or_else(|| parse_err(path, line, format!("non-numeric cell {cell:?} in column {}", k + 2)))?;
            values[row * t + k] = v;
            mask[row * t + k] = true;
        }
    }
    ObservationSeries::new(
        n,
        t,
        values,
        mask,
        time_step,
        stamps.first().copied().unwrap_or_default(),
    )
}

pub fn save_observations_csv(path: &Path, network: &SensorNetwork, obs: &ObservationSeries) -> Result<()> {
    if network.len() != obs.n_sensors() {
        return Err(Error::Shape(format!(
            "{} sensors but {} observation rows",
            network.len(),
            obs.n_sensors()
        )));
    }
    let mut out = String::from("id");
    for k in 0..obs.n_steps() {
        out.push(',');
        out.push_str(&format_timestamp(obs.timestamp(k)));
    }
    out.push('\n');
    for (i, s) in network.sensors().iter().enumerate() {
        out.push_str(&s.id);
        for k in 0..obs.n_steps() {
            out.push(',');
            if obs.is_observed(i, k) {
                out.push_str(&obs.value(i, k).to_string());
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
