//! Deterministic synthetic benchmark: sensors over a rectangular domain observing
//! a sum of drifting, pulsing Gaussian bumps.

use std::f64::consts::TAU;

use chrono::NaiveDateTime;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ObservationSeries, Sensor, SensorNetwork};
use crate::error::{Error, Result};
use crate::geometry::{BBox, GridSpec, Point};
use crate::raster::RasterField;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_sensors: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Fraction of sensors drawn around a few cluster centres (0 = stratified uniform).
    pub clustering: f64,
    pub n_clusters: usize,
    pub n_bumps: usize,
    /// Truth raster cells along the longer domain side.
    pub raster_width: usize,
    pub bounds: BBox,
    /// Seconds between columns.
    pub time_step: f64,
    /// Period, in steps, of the amplitude pulsation of each bump.
    pub pulse_period: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_sensors: 100,
            n_steps: 512,
            seed: 7,
            clustering: 0.5,
            n_clusters: 3,
            n_bumps: 6,
            raster_width: 64,
            bounds: BBox {
                min_x: -100.0,
                min_y: 35.0,
                max_x: -98.0,
                max_y: 37.0,
            },
            time_step: 3600.0,
            pulse_period: 24.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Point,
    pub orbit: (f64, f64),
    pub orbit_period: f64,
    pub orbit_phase: f64,
    pub amplitude: f64,
    pub pulse_depth: f64,
    pub pulse_period: f64,
    pub pulse_phase: f64,
    pub sigma: f64,
}

/// Analytic field: `base + trend·p + Σ bumps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpField {
    pub base: f64,
    pub trend: (f64, f64),
    pub origin: Point,
    pub bumps: Vec<Bump>,
}

impl BumpField {
    pub fn value(&self, p: Point, step: f64) -> f64 {
        let mut v = self.base + self.trend.0 * (p.x - self.origin.x) + self.trend.1 * (p.y - self.origin.y);
        for b in &self.bumps {
            let ang = TAU * step / b.orbit_period + b.orbit_phase;
            let c = Point::new(b.center.x + b.orbit.0 * ang.cos(), b.center.y + b.orbit.1 * ang.sin());
            let pulse = 1.0 + b.pulse_depth * (TAU * step / b.pulse_period + b.pulse_phase).sin();
            v += b.amplitude * pulse * (-p.dist2(c) / (2.0 * b.sigma * b.sigma)).exp();
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub network: SensorNetwork,
    pub observations: ObservationSeries,
    pub truth: RasterField,
    pub field: BumpField,
}

pub fn synthesize(cfg: &SynthConfig) -> Result<Synthetic> {
    if cfg.n_sensors < 10 {
        return Err(Error::Config(format!(
            "n_sensors must be at least 10, got {}",
            cfg.n_sensors
        )));
    }
    if cfg.n_steps < 16 {
        return Err(Error::Config(format!(
            "n_steps must be at least 16, got {}",
            cfg.n_steps
        )));
    }
    let b = cfg.bounds;
    if !(b.width() > 0.0 && b.height() > 0.0) {
        return Err(Error::DegenerateDomain("synthetic bounds have zero area".into()));
    }
    if !(0.0..=1.0).contains(&cfg.clustering) {
        return Err(Error::Config("clustering must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let positions = sample_positions(cfg, &mut rng);
    let sensors: Vec<Sensor> = positions
        .iter()
        .enumerate()
        .map(|(i, p)| Sensor::original(format!("S{i:03}"), p.x, p.y))
        .collect();
    let network = SensorNetwork::new(sensors, b.to_polygon())?;

    let field = sample_field(cfg, &mut rng);
    let t = cfg.n_steps;
    let mut values = Vec::with_capacity(positions.len() * t);
    for p in &positions {
        for k in 0..t {
            values.push(field.value(*p, k as f64) as f32);
        }
    }
    let start = NaiveDateTime::parse_from_str("2020-01-01T00:00:00", "%Y-%m-%dT%H:%M:%S").expect("literal");
    let observations = ObservationSeries::dense(positions.len(), t, values, cfg.time_step, start)?;

    let grid = GridSpec::with_long_side(b, cfg.raster_width);
    let mut truth = RasterField::filled(grid, t, 0.0);
    for k in 0..t {
        let frame = truth.frame_mut(k);
        for (i, v) in frame.iter_mut().enumerate() {
            *v = field.value(grid.center_of(i), k as f64) as f32;
        }
    }

    Ok(Synthetic {
        network,
        observations,
        truth,
        field,
    })
}

fn sample_positions(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let b = cfg.bounds;
    let n = cfg.n_sensors;
    let n_clustered = ((cfg.clustering * n as f64).round() as usize).min(n);
    let n_uniform = n - n_clustered;
    let mut pts = Vec::with_capacity(n);

    // Stratified uniform part: one jittered point per randomly chosen stratum.
    if n_uniform > 0 {
        let side = (n_uniform as f64).sqrt().ceil() as usize;
        let mut strata: Vec<usize> = (0..side * side).collect();
        for i in (1..strata.len()).rev() {
            let j = rng.gen_range(0..=i);
            strata.swap(i, j);
        }
        let (cw, ch) = (b.width() / side as f64, b.height() / side as f64);
        for &s in strata.iter().take(n_uniform) {
            let (r, c) = (s / side, s % side);
            pts.push(Point::new(
                b.min_x + (c as f64 + rng.gen::<f64>()) * cw,
                b.min_y + (r as f64 + rng.gen::<f64>()) * ch,
            ));
        }
    }

    if n_clustered > 0 {
        let k = cfg.n_clusters.max(1);
        let centers: Vec<Point> = (0..k)
            .map(|_| {
                Point::new(
                    b.min_x + b.width() * rng.gen_range(0.15..0.85),
                    b.min_y + b.height() * rng.gen_range(0.15..0.85),
                )
            })
            .collect();
        let spread = 0.07 * b.width().min(b.height());
        for i in 0..n_clustered {
            let c = centers[i % k];
            loop {
                let (g1, g2) = gaussian_pair(rng);
                let p = Point::new(c.x + spread * g1, c.y + spread * g2);
                if b.contains(p) {
                    pts.push(p);
                    break;
                }
            }
        }
    }
    pts
}

fn sample_field(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> BumpField {
    let b = cfg.bounds;
    let scale = b.width().min(b.height());
    let bumps = (0..cfg.n_bumps)
        .map(|_| {
            let sign = if rng.gen_bool(0.75) { 1.0 } else { -1.0 };
            Bump {
                center: Point::new(
                    b.min_x + b.width() * rng.gen_range(0.2..0.8),
                    b.min_y + b.height() * rng.gen_range(0.2..0.8),
                ),
                orbit: (scale * rng.gen_range(0.05..0.25), scale * rng.gen_range(0.05..0.25)),
                orbit_period: rng.gen_range(96.0..320.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
                orbit_phase: rng.gen_range(0.0..TAU),
                amplitude: sign * rng.gen_range(4.0..10.0),
                pulse_depth: rng.gen_range(0.3..0.7),
                pulse_period: cfg.pulse_period * rng.gen_range(0.8..1.25),
                pulse_phase: rng.gen_range(0.0..TAU),
                sigma: scale * rng.gen_range(0.08..0.2),
            }
        })
        .collect();
    BumpField {
        base: 10.0,
        trend: (rng.gen_range(-2.0..2.0) / scale, rng.gen_range(-2.0..2.0) / scale),
        origin: b.center(),
        bumps,
    }
}

fn gaussian_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    (r * (TAU * u2).cos(), r * (TAU * u2).sin())
}
