//! Reliability glyph statistics and hatch opacity.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ObservationSeries, SensorNetwork};
use crate::densify::DensityField;
use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::graph::haversine;
use crate::model::Model;
use crate::training::impute;

/// Impute each half of the original sensors from the other half and merge,
/// so every sensor's reference comes from the pass where it was hidden.
/// Virtual sensors take the first pass's imputation.
pub fn reference_values(
    model: &Model,
    network: &SensorNetwork,
    data: &ObservationSeries,
    seed: u64,
) -> Result<ObservationSeries> {
    let mut originals = network.original_indices();
    if originals.len() < 2 {
        return Err(Error::Config(
            "reference values need at least two original sensors".into(),
        ));
    }
    originals.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = originals.len() / 2;
    let (a, b) = originals.split_at(half);
    let flags = |visible: &[usize]| {
        let mut f = vec![false; network.len()];
        for &i in visible {
            f[i] = true;
        }
        f
    };
    let from_b = impute(model, network, data, &flags(b))?;
    let from_a = impute(model, network, data, &flags(a))?;
    let mut out = from_b.clone();
    for &i in b {
        for s in 0..data.n_steps() {
            out.set(i, s, from_a.value(i, s));
        }
    }
    Ok(out)
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphCell {
    pub row: usize,
    pub col: usize,
    /// Normalized mean deviation; `None` when the cell holds no sensor.
    pub h_p: Option<f64>,
    pub h_low: Option<f64>,
    pub h_high: Option<f64>,
    pub w: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphGrid {
    pub grid: GridSpec,
    pub cells: Vec<GlyphCell>,
    /// Raw deviation that maps to ±1.
    pub scale: f64,
}

impl GlyphGrid {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,h_p,h_low,h_high,w,count\n");
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.row,
                c.col,
                opt(c.h_p),
                opt(c.h_low),
                opt(c.h_high),
                c.w,
                c.count
            );
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// True when no cell carries a nonzero deviation.
    pub fn is_flat(&self) -> bool {
        self.cells
            .iter()
            .all(|c| [c.h_p, c.h_low, c.h_high].iter().all(|v| v.unwrap_or(0.0) == 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlyphParams {
    /// Nearest sensors averaged for the width term.
    pub neighbors: usize,
    /// Trailing steps averaged into each deviation (1 = the rendered step only).
    pub window: usize,
}

impl Default for GlyphParams {
    fn default() -> Self {
        Self {
            neighbors: 10,
            window: 1,
        }
    }
}

/// Per-cell deviation statistics of `data − x_ref` at `step` and the
/// interpolation-distance width term.
pub fn glyph_metrics(
    data: &ObservationSeries,
    x_ref: &ObservationSeries,
    network: &SensorNetwork,
    grid: GridSpec,
    step: usize,
    params: GlyphParams,
) -> Result<GlyphGrid> {
    let n = network.len();
    if data.n_sensors() != n || x_ref.n_sensors() != n || data.n_steps() != x_ref.n_steps() {
        return Err(Error::Shape("data, references and network disagree".into()));
    }
    if step >= data.n_steps() {
        return Err(Error::Config(format!("step {step} is past the end of the series")));
    }
    if params.neighbors == 0 || params.window == 0 {
        return Err(Error::Config("neighbours and window must be positive".into()));
    }
    let first = (step + 1).saturating_sub(params.window);
    let positions = network.positions();
    let mut per_cell: Vec<Vec<f64>> = vec![Vec::new(); grid.len()];
    for (i, s) in network.sensors().iter().enumerate() {
        if !s.is_original() {
            continue;
        }
        let devs: Vec<f64> = (first..=step)
            .filter(|&k| data.is_observed(i, k))
            .map(|k| f64::from(data.value(i, k)) - f64::from(x_ref.value(i, k)))
            .collect();
        if devs.is_empty() {
            continue;
        }
        if let Some((r, c)) = grid.locate(positions[i]) {
            per_cell[r * grid.width + c].push(devs.iter().sum::<f64>() / devs.len() as f64);
        }
    }

    let k = params.neighbors.min(n);
    let spread: Vec<f64> = (0..grid.len())
        .map(|idx| {
            let center = grid.center_of(idx);
            let mut d: Vec<f64> = positions.iter().map(|&p| haversine(center, p)).collect();
            d.sort_by(f64::total_cmp);
            d[..k].iter().sum::<f64>() / k as f64
        })
        .collect();
    let max_spread = spread.iter().cloned().fold(0.0, f64::max);

    let raw: Vec<Option<(f64, f64, f64)>> = per_cell
        .iter_mut()
        .map(|devs| {
            if devs.is_empty() {
                return None;
            }
            devs.sort_by(f64::total_cmp);
            let mean = devs.iter().sum::<f64>() / devs.len() as f64;
            Some((mean, quantile(devs, 0.25), quantile(devs, 0.75)))
        })
        .collect();
    let scale = raw
        .iter()
        .flatten()
        .flat_map(|&(a, b, c)| [a.abs(), b.abs(), c.abs()])
        .fold(0.0, f64::max);
    let norm = |v: f64| if scale > 0.0 { (v / scale).clamp(-1.0, 1.0) } else { 0.0 };
    let cells = (0..grid.len())
        .map(|idx| {
            let stats = raw[idx];
            GlyphCell {
                row: idx / grid.width,
                col: idx % grid.width,
                h_p: stats.map(|s| norm(s.0)),
                h_low: stats.map(|s| norm(s.1)),
                h_high: stats.map(|s| norm(s.2)),
                w: if max_spread > 0.0 {
                    (1.0 - spread[idx] / max_spread).clamp(0.0, 1.0)
                } else {
                    1.0
                },
                count: per_cell[idx].len(),
            }
        })
        .collect();
    Ok(GlyphGrid { grid, cells, scale })
}

/// Per-cell hatch opacity `clamp((threshold − D)/threshold, 0, 1)`; cells
/// outside the boundary carry no hatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HatchField {
    pub grid: GridSpec,
    pub opacity: Vec<f64>,
    pub threshold: f64,
}

pub fn hatch_opacity(density: &DensityField, threshold: f64) -> Result<HatchField> {
    if !(threshold > 0.0) {
        return Err(Error::Config(format!(
            "hatch threshold must be positive, got {threshold}"
        )));
    }
    let opacity = density
        .values
        .iter()
        .zip(&density.inside)
        .map(|(&d, &inside)| {
            if inside {
                ((threshold - d) / threshold).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    Ok(HatchField {
        grid: density.grid,
        opacity,
        threshold,
    })
}

/// Default threshold: mean density over interior cells.
pub fn default_threshold(density: &DensityField) -> f64 {
    let (sum, count) = density
        .values
        .iter()
        .zip(&density.inside)
        .filter(|e| *e.1)
        .fold((0.0, 0usize), |(s, c), (v, _)| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_interpolate_linearly() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.75), 3.25);
        assert_eq!(quantile(&[5.0], 0.25), 5.0);
    }
}
