//! Gaussian RBF interpolation with smoothing and a polynomial tail, solved
//! locally on the N nearest centres of every evaluation point.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ObservationSeries;
use crate::error::{Error, Result};
use crate::geometry::{BBox, GridSpec, Point, Polygon};
use crate::linalg::Lu;
use crate::raster::{RasterField, NODATA};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RbfConfig {
    /// Shape parameter ε of φ(r) = e^(−εr²), with r in units of the domain diagonal.
    pub epsilon: f64,
    /// Smoothing λ added to the kernel diagonal.
    pub lambda: f64,
    /// Centres per local solve.
    pub neighbors: usize,
    /// Degree of the polynomial tail (0, 1 or 2).
    pub poly_degree: usize,
}

impl Default for RbfConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            lambda: 0.5,
            neighbors: 10,
            poly_degree: 1,
        }
    }
}

impl RbfConfig {
    pub fn monomial_count(&self) -> usize {
        (self.poly_degree + 1) * (self.poly_degree + 2) / 2
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.poly_degree > 2 {
            return Err(Error::Config("polynomial degree must be 0, 1 or 2".into()));
        }
        if self.neighbors < self.monomial_count() {
            return Err(Error::Config(format!(
                "{} neighbours cannot determine {} polynomial terms",
                self.neighbors,
                self.monomial_count()
            )));
        }
        Ok(())
    }
}

/// Affine map from lng/lat to the unitless coordinates the kernel sees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbfFrame {
    pub origin: Point,
    pub scale: f64,
}

impl RbfFrame {
    /// Centre on the box and divide by its diagonal.
    pub fn for_bounds(bounds: BBox) -> Result<Self> {
        let scale = bounds.diagonal();
        if !(scale > 0.0) {
            return Err(Error::DegenerateDomain("interpolation domain has no extent".into()));
        }
        Ok(Self {
            origin: bounds.center(),
            scale,
        })
    }

    fn map(&self, p: Point) -> (f64, f64) {
        ((p.x - self.origin.x) / self.scale, (p.y - self.origin.y) / self.scale)
    }
}

fn monomials(degree: usize, (x, y): (f64, f64), out: &mut Vec<f64>) {
    out.push(1.0);
    if degree >= 1 {
        out.extend_from_slice(&[x, y]);
    }
    if degree >= 2 {
        out.extend_from_slice(&[x * x, x * y, y * y]);
    }
}

fn kernel(eps: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    (-eps * (dx * dx + dy * dy)).exp()
}

/// Factor `[[Φ + λI, P], [Pᵀ, 0]]` for the given mapped centres.
fn factor_system(centers: &[(f64, f64)], cfg: &RbfConfig) -> Result<Lu> {
    let n = centers.len();
    let m = cfg.monomial_count();
    let size = n + m;
    let mut a = vec![0.0; size * size];
    let mut row = Vec::with_capacity(m);
    for i in 0..n {
        for j in 0..n {
            a[i * size + j] = kernel(cfg.epsilon, centers[i], centers[j]);
        }
        a[i * size + i] += cfg.lambda;
        row.clear();
        monomials(cfg.poly_degree, centers[i], &mut row);
        for (k, &v) in row.iter().enumerate() {
            a[i * size + n + k] = v;
            a[(n + k) * size + i] = v;
        }
    }
    Lu::factor(size, a)
}

fn check_distinct(points: &[Point]) -> Result<()> {
    let mut sorted: Vec<Point> = points.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            return Err(Error::DuplicateCenter(w[0].x, w[0].y));
        }
    }
    Ok(())
}

/// Solved interpolant `f(s) = Σ cⱼ φ(‖s − sⱼ‖) + Σ bₖ pₖ(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfInterpolant {
    frame: RbfFrame,
    config: RbfConfig,
    centers: Vec<(f64, f64)>,
    pub c: Vec<f64>,
    pub b: Vec<f64>,
}

impl RbfInterpolant {
    pub fn eval(&self, p: Point) -> f64 {
        let q = self.frame.map(p);
        let mut v: f64 = self
            .centers
            .iter()
            .zip(&self.c)
            .map(|(&s, c)| c * kernel(self.config.epsilon, q, s))
            .sum();
        let mut mono = Vec::with_capacity(self.b.len());
        monomials(self.config.poly_degree, q, &mut mono);
        v += mono.iter().zip(&self.b).map(|(a, b)| a * b).sum::<f64>();
        v
    }
}

/// Solve the smoothed, polynomial-augmented system over all `centers`.
pub fn rbf_solve(centers: &[Point], values: &[f64], cfg: &RbfConfig, frame: RbfFrame) -> Result<RbfInterpolant> {
    let m = cfg.monomial_count();
    if centers.len() != values.len() {
        return Err(Error::Shape(format!(
            "{} centres with {} values",
            centers.len(),
            values.len()
        )));
    }
    if centers.len() < m {
        return Err(Error::TooFewCenters {
            available: centers.len(),
            required: m,
        });
    }
    check_distinct(centers)?;
    let mapped: Vec<(f64, f64)> = centers.iter().map(|&p| frame.map(p)).collect();
    let lu = factor_system(&mapped, cfg)?;
    let mut rhs = values.to_vec();
    rhs.extend(std::iter::repeat_n(0.0, m));
    let sol = lu.solve(&rhs);
    let n = centers.len();
    Ok(RbfInterpolant {
        frame,
        config: *cfg,
        centers: mapped,
        c: sol[..n].to_vec(),
        b: sol[n..].to_vec(),
    })
}

/// Linear weights over the local centres of one evaluation point.
#[derive(Debug, Clone, PartialEq)]
struct Stencil {
    indices: Vec<usize>,
    weights: Vec<f64>,
}

fn nearest(points: &[(f64, f64)], active: &[usize], q: (f64, f64), count: usize) -> Vec<usize> {
    let mut by_dist: Vec<(f64, usize)> = active
        .iter()
        .map(|&i| {
            let (dx, dy) = (points[i].0 - q.0, points[i].1 - q.1);
            (dx * dx + dy * dy, i)
        })
        .collect();
    let count = count.min(by_dist.len());
    by_dist.select_nth_unstable_by(count - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut idx: Vec<usize> = by_dist[..count].iter().map(|e| e.1).collect();
    idx.sort_unstable();
    idx
}

/// Weights `w` with `f(q) = Σ wⱼ xⱼ`, from `M w = [φ(q); p(q)]` (M is symmetric).
fn stencil(points: &[(f64, f64)], indices: Vec<usize>, lu: &Lu, q: (f64, f64), cfg: &RbfConfig) -> Stencil {
    let mut rhs: Vec<f64> = indices.iter().map(|&i| kernel(cfg.epsilon, q, points[i])).collect();
    monomials(cfg.poly_degree, q, &mut rhs);
    let mut w = lu.solve(&rhs);
    w.truncate(indices.len());
    Stencil { indices, weights: w }
}

fn stencils(
    positions: &[(f64, f64)],
    active: &[usize],
    queries: &[Option<(f64, f64)>],
    cfg: &RbfConfig,
    chunk: usize,
) -> Result<Vec<Option<Stencil>>> {
    let chunks: Vec<Result<Vec<Option<Stencil>>>> = queries
        .par_chunks(chunk.max(1))
        .map(|qs| {
            let mut cache: HashMap<Vec<usize>, Lu> = HashMap::new();
            qs.iter()
                .map(|q| {
                    let Some(q) = *q else { return Ok(None) };
                    let idx = nearest(positions, active, q, cfg.neighbors);
                    if !cache.contains_key(&idx) {
                        let centers: Vec<(f64, f64)> = idx.iter().map(|&i| positions[i]).collect();
                        cache.insert(idx.clone(), factor_system(&centers, cfg)?);
                    }
                    let lu = &cache[&idx];
                    Ok(Some(stencil(positions, idx, lu, q, cfg)))
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(queries.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Evaluate the local interpolant at arbitrary points, using every centre in `values`.
pub fn interpolate_points(
    centers: &[Point],
    values: &[f64],
    cfg: &RbfConfig,
    frame: RbfFrame,
    points: &[Point],
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if centers.len() != values.len() {
        return Err(Error::Shape(format!(
            "{} centres with {} values",
            centers.len(),
            values.len()
        )));
    }
    if centers.len() < cfg.monomial_count() {
        return Err(Error::TooFewCenters {
            available: centers.len(),
            required: cfg.monomial_count(),
        });
    }
    check_distinct(centers)?;
    let mapped: Vec<(f64, f64)> = centers.iter().map(|&p| frame.map(p)).collect();
    let active: Vec<usize> = (0..centers.len()).collect();
    let queries: Vec<Option<(f64, f64)>> = points.iter().map(|&p| Some(frame.map(p))).collect();
    let st = stencils(&mapped, &active, &queries, cfg, 64)?;
    Ok(st
        .into_iter()
        .map(|s| {
            let s = s.expect("every query is inside");
            s.indices.iter().zip(&s.weights).map(|(&i, w)| w * values[i]).sum()
        })
        .collect())
}

/// Rasterise every timestep of `series`. Unobserved entries are excluded from
/// that step's centres; cells outside `boundary` are nodata.
pub fn interpolate(
    positions: &[Point],
    series: &ObservationSeries,
    cfg: &RbfConfig,
    grid: GridSpec,
    boundary: &Polygon,
) -> Result<RasterField> {
    cfg.validate()?;
    let n = positions.len();
    if series.n_sensors() != n {
        return Err(Error::Shape(format!(
            "{n} positions but {} series rows",
            series.n_sensors()
        )));
    }
    check_distinct(positions)?;
    let frame = RbfFrame::for_bounds(grid.bounds)?;
    let mapped: Vec<(f64, f64)> = positions.iter().map(|&p| frame.map(p)).collect();
    let inside = grid.inside_mask(boundary);
    let queries: Vec<Option<(f64, f64)>> = (0..grid.len())
        .map(|k| inside[k].then(|| frame.map(grid.center_of(k))))
        .collect();

    let t = series.n_steps();
    let mut patterns: Vec<(Vec<bool>, Vec<usize>)> = Vec::new();
    let mut lookup: HashMap<Vec<bool>, usize> = HashMap::new();
    for s in 0..t {
        let key: Vec<bool> = (0..n).map(|i| series.is_observed(i, s)).collect();
        let slot = *lookup.entry(key.clone()).or_insert_with(|| {
            patterns.push((key, Vec::new()));
            patterns.len() - 1
        });
        patterns[slot].1.push(s);
    }

    let mut raster = RasterField::filled(grid, t, NODATA);
    for (key, steps) in &patterns {
        let active: Vec<usize> = (0..n).filter(|&i| key[i]).collect();
        if active.len() < cfg.monomial_count() {
            return Err(Error::TooFewCenters {
                available: active.len(),
                required: cfg.monomial_count(),
            });
        }
        let st = stencils(&mapped, &active, &queries, cfg, grid.width)?;
        for &s in steps {
            let frame = raster.frame_mut(s);
            for (cell, st) in frame.iter_mut().zip(&st) {
                if let Some(st) = st {
                    let v: f64 = st
                        .indices
                        .iter()
                        .zip(&st.weights)
                        .map(|(&i, w)| w * f64::from(series.value(i, s)))
                        .sum();
                    *cell = v as f32;
                }
            }
        }
    }
    Ok(raster)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_frame() -> RbfFrame {
        RbfFrame {
            origin: Point::new(0.0, 0.0),
            scale: 1.0,
        }
    }

    #[test]
    fn single_center_is_exact() {
        let cfg = RbfConfig {
            lambda: 0.0,
            poly_degree: 0,
            neighbors: 1,
            ..RbfConfig::default()
        };
        let f = rbf_solve(&[Point::new(0.2, 0.3)], &[4.0], &cfg, unit_frame()).unwrap();
        assert!((f.eval(Point::new(0.2, 0.3)) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn duplicates_and_too_few_centres_fail() {
        let cfg = RbfConfig::default();
        let p = Point::new(0.0, 0.0);
        assert!(matches!(
            rbf_solve(&[p, Point::new(1.0, 0.0), p], &[1.0, 2.0, 3.0], &cfg, unit_frame()),
            Err(Error::DuplicateCenter(..))
        ));
        assert!(matches!(
            rbf_solve(&[p, Point::new(1.0, 0.0)], &[1.0, 2.0], &cfg, unit_frame()),
            Err(Error::TooFewCenters { .. })
        ));
    }

    #[test]
    fn polynomial_constraint_holds() {
        let pts = [
            Point::new(0.0, 0.0),
            Point::new(0.5, 0.1),
            Point::new(0.2, 0.7),
            Point::new(0.9, 0.8),
        ];
        let f = rbf_solve(&pts, &[1.0, -2.0, 0.5, 3.0], &RbfConfig::default(), unit_frame()).unwrap();
        let s0: f64 = f.c.iter().sum();
        let s1: f64 = f.c.iter().zip(&pts).map(|(c, p)| c * p.x).sum();
        assert!(s0.abs() < 1e-10 && s1.abs() < 1e-10);
    }
}
