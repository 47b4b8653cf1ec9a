//! Adaptive sensor densification: kernel density of the existing sensors,
//! inverted into a sampling probability, sampled, then relaxed with Lloyd
//! iterations towards a centroidal Voronoi tessellation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ObservationSeries, SensorNetwork};
use crate::error::{Error, Result};
use crate::geometry::{BBox, GridSpec, Point, Polygon};

pub const DEFAULT_GRID_RESOLUTION: usize = 256;

/// Per-axis Gaussian kernel bandwidth in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub x: f64,
    pub y: f64,
}

/// Scalar field on a grid over the boundary's bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    /// Cell centre lies inside the boundary.
    pub inside: Vec<bool>,
    pub bandwidth: Bandwidth,
}

impl DensityField {
    pub fn cell_size(&self) -> (f64, f64) {
        (self.grid.cell_width(), self.grid.cell_height())
    }

    /// Value of the cell holding `p`, 0 outside the grid.
    pub fn at(&self, p: Point) -> f64 {
        self.grid
            .locate(p)
            .map(|(r, c)| self.values[r * self.grid.width + c])
            .unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Minimum over cells inside the boundary.
    pub fn interior_min(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.inside)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Silverman's rule in two dimensions: `σ̂_axis · n^(-1/6)`.
pub fn silverman_bandwidth(points: &[Point]) -> Result<Bandwidth> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Config("kernel density needs at least two sensors".into()));
    }
    let nf = n as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x / nf, b + p.y / nf));
    let (vx, vy) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + (p.x - mx).powi(2), b + (p.y - my).powi(2)));
    let factor = nf.powf(-1.0 / 6.0);
    let bw = Bandwidth {
        x: (vx / (nf - 1.0)).sqrt() * factor,
        y: (vy / (nf - 1.0)).sqrt() * factor,
    };
    if !(bw.x > 0.0 && bw.y > 0.0) {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(bw)
}

/// `(1/n) Σ K_h(p − s_i)` with a product Gaussian kernel normalised to unit mass.
pub fn kernel_density_at(points: &[Point], bw: Bandwidth, p: Point) -> f64 {
    let norm = 1.0 / (std::f64::consts::TAU * bw.x * bw.y * points.len() as f64);
    points
        .iter()
        .map(|s| {
            let dx = (p.x - s.x) / bw.x;
            let dy = (p.y - s.y) / bw.y;
            (-0.5 * (dx * dx + dy * dy)).exp()
        })
        .sum::<f64>()
        * norm
}

/// Density evaluated at every cell centre of `grid`, with no boundary clipping.
pub fn kde_on_grid(points: &[Point], bw: Bandwidth, grid: GridSpec) -> Vec<f64> {
    (0..grid.len())
        .into_par_iter()
        .map(|i| kernel_density_at(points, bw, grid.center_of(i)))
        .collect()
}

/// Density of the network's original sensors over its boundary box, zero outside
/// the boundary. `grid_resolution` counts cells along the longer side.
pub fn kde(network: &SensorNetwork, grid_resolution: usize) -> Result<DensityField> {
    let grid = GridSpec::with_long_side(network.bounds(), grid_resolution);
    kde_for_grid(network, grid)
}

pub fn kde_for_grid(network: &SensorNetwork, grid: GridSpec) -> Result<DensityField> {
    let pts: Vec<Point> = network
        .sensors()
        .iter()
        .filter(|s| s.is_original())
        .map(|s| s.position())
        .collect();
    let bandwidth = silverman_bandwidth(&pts)?;
    let inside = grid.inside_mask(network.boundary());
    let mut values = kde_on_grid(&pts, bandwidth, grid);
    for (v, &m) in values.iter_mut().zip(&inside) {
        if !m {
            *v = 0.0;
        }
    }
    Ok(DensityField {
        grid,
        values,
        inside,
        bandwidth,
    })
}

/// `max(e^(−λD) − θ, 0)`, min-max normalised over interior cells; 0 outside.
pub fn invert_density(d: &DensityField, lambda: f64, theta: f64) -> Result<DensityField> {
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::Config(format!("theta must lie in [0, 1), got {theta}")));
    }
    let raw: Vec<f64> = d
        .values
        .iter()
        .map(|&v| ((-lambda * v).exp() - theta).max(0.0))
        .collect();
    let (lo, hi) = raw
        .iter()
        .zip(&d.inside)
        .filter(|(_, &m)| m)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let values = raw
        .iter()
        .zip(&d.inside)
        .map(|(&v, &m)| {
            if !m || v <= 0.0 {
                0.0
            } else if span > 0.0 {
                (v - lo) / span
            } else {
                1.0
            }
        })
        .collect();
    Ok(DensityField {
        grid: d.grid,
        values,
        inside: d.inside.clone(),
        bandwidth: d.bandwidth,
    })
}

/// Draw `count` distinct cells with probability proportional to their value
/// (successive sampling without replacement) and jitter each point uniformly
/// inside its cell.
pub fn sample_virtual(dbar: &DensityField, count: usize, seed: u64) -> Result<Vec<Point>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let support: Vec<usize> = (0..dbar.values.len()).filter(|&i| dbar.values[i] > 0.0).collect();
    if support.len() < count {
        return Err(Error::InsufficientMass {
            requested: count,
            available: support.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Efraimidis–Spirakis keys: the `count` largest u^(1/w) form a weighted
    // sample without replacement.
    let mut keyed: Vec<(f64, usize)> = support
        .iter()
        .map(|&i| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            (u.ln() / dbar.values[i], i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let (cw, ch) = dbar.cell_size();
    let g = dbar.grid;
    Ok(keyed
        .into_iter()
        .take(count)
        .map(|(_, i)| {
            let (r, c) = (i / g.width, i % g.width);
            Point::new(
                g.bounds.min_x + (c as f64 + rng.gen::<f64>()) * cw,
                g.bounds.max_y - (r as f64 + rng.gen::<f64>()) * ch,
            )
        })
        .collect())
}

/// Voronoi cell of every site, clipped to `bounds`.
pub fn voronoi_cells(sites: &[Point], bounds: BBox) -> Vec<Polygon> {
    let frame = bounds.to_polygon();
    (0..sites.len()).map(|i| voronoi_cell(sites, i, &frame)).collect()
}

fn voronoi_cell(sites: &[Point], i: usize, frame: &Polygon) -> Polygon {
    let s = sites[i];
    let mut order: Vec<usize> = (0..sites.len()).filter(|&j| j != i).collect();
    // Nearest sites first shrinks the polygon early.
    order.sort_by(|&a, &b| s.dist2(sites[a]).total_cmp(&s.dist2(sites[b])));
    let mut cell = frame.clone();
    for j in order {
        let o = sites[j];
        let (a, b) = (o.x - s.x, o.y - s.y);
        if a == 0.0 && b == 0.0 {
            continue;
        }
        let c = a * 0.5 * (s.x + o.x) + b * 0.5 * (s.y + o.y);
        cell = cell.clip_half_plane(a, b, c);
        if cell.len() < 3 {
            break;
        }
    }
    cell
}

/// Lloyd relaxation of the virtual sensors; originals stay fixed. Virtual sensors
/// whose clipped cell reaches outside the boundary polygon keep their position.
pub fn cvt_relax(network: &SensorNetwork, virtual_points: &[Point], iterations: usize) -> Vec<Point> {
    relax(network, virtual_points, iterations, None)
}

/// As [`cvt_relax`], additionally rejecting moves into cells where `allowed` is 0.
pub fn cvt_relax_within(
    network: &SensorNetwork,
    virtual_points: &[Point],
    iterations: usize,
    allowed: &DensityField,
) -> Vec<Point> {
    relax(network, virtual_points, iterations, Some(allowed))
}

fn relax(
    network: &SensorNetwork,
    virtual_points: &[Point],
    iterations: usize,
    allowed: Option<&DensityField>,
) -> Vec<Point> {
    let fixed: Vec<Point> = network
        .sensors()
        .iter()
        .filter(|s| s.is_original())
        .map(|s| s.position())
        .collect();
    let boundary = network.boundary();
    let bounds = network.bounds();
    let frame = bounds.to_polygon();
    let mut moving = virtual_points.to_vec();
    for _ in 0..iterations {
        let sites: Vec<Point> = fixed.iter().chain(&moving).copied().collect();
        let targets: Vec<Option<Point>> = (0..moving.len())
            .into_par_iter()
            .map(|k| {
                let cell = voronoi_cell(&sites, fixed.len() + k, &frame);
                if cell.len() < 3 || cell.ring().iter().any(|&v| !boundary.contains(v)) {
                    return None;
                }
                let c = cell.centroid();
                match allowed {
                    Some(field) if field.at(c) <= 0.0 => None,
                    _ => Some(c),
                }
            })
            .collect();
        for (p, t) in moving.iter_mut().zip(targets) {
            if let Some(t) = t {
                *p = t;
            }
        }
    }
    moving
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyParams {
    pub delta: f64,
    pub lambda: f64,
    pub theta: f64,
    pub iterations: usize,
    pub seed: u64,
    pub grid_resolution: usize,
}

impl Default for DensifyParams {
    fn default() -> Self {
        Self {
            delta: 0.4,
            lambda: 5.0,
            theta: 0.05,
            iterations: 3,
            seed: 0,
            grid_resolution: DEFAULT_GRID_RESOLUTION,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Densified {
    pub network: SensorNetwork,
    pub observations: ObservationSeries,
    pub density: DensityField,
    pub inverted: DensityField,
    pub virtual_points: Vec<Point>,
}

/// Append `⌊δ·n_original⌋` virtual sensors (all-missing observation rows).
pub fn densify(network: &SensorNetwork, observations: &ObservationSeries, params: &DensifyParams) -> Result<Densified> {
    if !(params.delta >= 0.0) {
        return Err(Error::Config(format!(
            "delta must be non-negative, got {}",
            params.delta
        )));
    }
    if observations.n_sensors() != network.len() {
        return Err(Error::Shape(format!(
            "{} sensors but {} observation rows",
            network.len(),
            observations.n_sensors()
        )));
    }
    let density = kde(network, params.grid_resolution)?;
    let inverted = invert_density(&density, params.lambda, params.theta)?;
    let count = (params.delta * network.count_original() as f64).floor() as usize;
    if count == 0 {
        return Ok(Densified {
            network: network.clone(),
            observations: observations.clone(),
            density,
            inverted,
            virtual_points: Vec::new(),
        });
    }
    let sampled = sample_virtual(&inverted, count, params.seed)?;
    let relaxed = cvt_relax_within(network, &sampled, params.iterations, &inverted);
    let dense = network.with_virtual(&relaxed)?;
    Ok(Densified {
        network: dense,
        observations: observations.with_empty_rows(count),
        density,
        inverted,
        virtual_points: relaxed,
    })
}
