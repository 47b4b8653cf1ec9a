//! k-nearest-neighbour sensor graphs weighted by great-circle distance.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::SensorNetwork;
use crate::error::{Error, Result};
use crate::geometry::Point;

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance in km between two lng/lat points in degrees.
pub fn haversine(p: Point, q: Point) -> f64 {
    let (lat1, lat2) = (p.y.to_radians(), q.y.to_radians());
    let dlat = lat2 - lat1;
    let dlng = (q.x - p.x).to_radians();
    let a = (dlat * 0.5).sin().powi(2) + lat1.cos() * lat2.cos() * (dlng * 0.5).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Row-sparse square matrix. Each row lists `(column, weight)` sorted by column.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseMatrix {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            rows: vec![Vec::new(); n],
        }
    }

    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let rows = rows
            .into_iter()
            .map(|mut r| {
                r.sort_by_key(|e| e.0);
                r
            })
            .collect();
        Self { n, rows }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |e| e.0)
            .map(|k| self.rows[i][k].1)
            .unwrap_or(0.0)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Keep only entries whose endpoints are both flagged.
    pub fn restrict(&self, keep: &[bool]) -> SparseMatrix {
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                if !keep[i] {
                    return Vec::new();
                }
                r.iter().copied().filter(|&(j, _)| keep[j]).collect()
            })
            .collect();
        SparseMatrix { n: self.n, rows }
    }

    /// Reindex rows and columns: new node `k` is old node `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> SparseMatrix {
        let mut inverse = vec![0; order.len()];
        for (k, &old) in order.iter().enumerate() {
            inverse[old] = k;
        }
        let rows = order
            .iter()
            .map(|&old| self.rows[old].iter().map(|&(j, w)| (inverse[j], w)).collect())
            .collect();
        SparseMatrix::from_rows(rows)
    }

    pub fn to_triplet_csv(&self) -> String {
        let mut out = String::from("i,j,weight\n");
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, w) in r {
                let _ = writeln!(out, "{i},{j},{w}");
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorGraph {
    /// Message passing restricted to original sensors.
    pub a_first: SparseMatrix,
    pub a_sub: SparseMatrix,
    pub k: usize,
    /// Mean pairwise great-circle distance (km).
    pub eta: f64,
    pub distance_scale: f64,
}

impl SensorGraph {
    pub fn n(&self) -> usize {
        self.a_sub.n()
    }

    pub fn save_triplets(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, m) in [("a_first.csv", &self.a_first), ("a_sub.csv", &self.a_sub)] {
            let path = dir.join(name);
            std::fs::write(&path, m.to_triplet_csv()).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Mean great-circle distance over all unordered sensor pairs.
pub fn mean_pairwise_distance(points: &[Point]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += haversine(points[i], points[j]);
        }
    }
    sum / (n * (n - 1) / 2) as f64
}

/// Weights `e^(−H/scale)` on each sensor's k nearest neighbours, symmetrised by
/// union and divided by the largest weight. `distance_scale` defaults to η.
pub fn build_graph(network: &SensorNetwork, k: usize, distance_scale: Option<f64>) -> Result<SensorGraph> {
    let n = network.len();
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if k >= n {
        return Err(Error::Config(format!(
            "k = {k} must be smaller than the sensor count {n}"
        )));
    }
    let pts = network.positions();
    let eta = mean_pairwise_distance(&pts);
    let scale = distance_scale.unwrap_or(eta);
    if !(scale > 0.0) {
        return Err(Error::Config(format!("distance scale must be positive, got {scale}")));
    }
    let ids: Vec<&str> = network.sensors().iter().map(|s| s.id.as_str()).collect();

    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = haversine(pts[i], pts[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    let mut adj = vec![false; n * n];
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| {
            dist[i * n + a]
                .total_cmp(&dist[i * n + b])
                .then_with(|| ids[a].cmp(ids[b]))
        });
        for &j in others.iter().take(k) {
            adj[i * n + j] = true;
            adj[j * n + i] = true;
        }
    }

    let mut max_w: f64 = 0.0;
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if adj[i * n + j] {
                let w = (-dist[i * n + j] / scale).exp();
                max_w = max_w.max(w);
                rows[i].push((j, w));
            }
        }
    }
    if max_w > 0.0 {
        for r in rows.iter_mut() {
            for e in r.iter_mut() {
                e.1 /= max_w;
            }
        }
    }
    let a_sub = SparseMatrix::from_rows(rows);
    let original: Vec<bool> = network.sensors().iter().map(|s| s.is_original()).collect();
    let a_first = a_sub.restrict(&original);
    Ok(SensorGraph {
        a_first,
        a_sub,
        k,
        eta,
        distance_scale: scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Sensor, SensorKind};
    use crate::geometry::BBox;
    use proptest::prelude::*;

    fn network(points: &[(f64, f64)]) -> SensorNetwork {
        let sensors = points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Sensor::original(format!("s{i:02}"), x, y))
            .collect();
        SensorNetwork::new(
            sensors,
            BBox {
                min_x: -5.0,
                min_y: -5.0,
                max_x: 5.0,
                max_y: 5.0,
            }
            .to_polygon(),
        )
        .unwrap()
    }

    #[test]
    fn quarter_meridian() {
        let d = haversine(Point::new(0.0, 0.0), Point::new(0.0, 90.0));
        let expected = std::f64::consts::TAU * EARTH_RADIUS_KM / 4.0;
        assert!((d - expected).abs() / expected < 1e-3);
        assert!((d - 10007.5).abs() / 10007.5 < 1e-3);
        assert_eq!(haversine(Point::new(3.0, 4.0), Point::new(3.0, 4.0)), 0.0);
    }

    proptest! {
        #[test]
        fn haversine_is_symmetric(a in -180.0..180.0f64, b in -90.0..90.0f64, c in -180.0..180.0f64, d in -90.0..90.0f64) {
            let p = Point::new(a, b);
            let q = Point::new(c, d);
            prop_assert_eq!(haversine(p, q), haversine(q, p));
        }
    }

    #[test]
    fn collinear_middle_sensor_sees_both_ends_equally() {
        let net = network(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let g = build_graph(&net, 2, None).unwrap();
        let row = g.a_sub.row(1);
        assert_eq!(row.len(), 2);
        assert!((row[0].1 - row[1].1).abs() < 1e-12);
        for i in 0..3 {
            assert_eq!(g.a_sub.get(i, i), 0.0);
        }
    }

    #[test]
    fn nearest_neighbour_gets_row_maximum_and_weights_decay() {
        let pts: Vec<(f64, f64)> = (0..12)
            .map(|i| ((i as f64 * 0.37).sin() * 3.0, (i as f64 * 0.91).cos() * 3.0))
            .collect();
        let net = network(&pts);
        let g = build_graph(&net, 3, None).unwrap();
        let p = net.positions();
        let mut max_seen = 0.0f64;
        for i in 0..pts.len() {
            let row = g.a_sub.row(i);
            let mut by_dist: Vec<(f64, f64)> = row.iter().map(|&(j, w)| (haversine(p[i], p[j]), w)).collect();
            by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in by_dist.windows(2) {
                if w[0].0 < w[1].0 {
                    assert!(w[0].1 > w[1].1);
                }
            }
            let nearest = (0..pts.len())
                .filter(|&j| j != i)
                .min_by(|&a, &b| haversine(p[i], p[a]).total_cmp(&haversine(p[i], p[b])))
                .unwrap();
            let wmax = row.iter().map(|e| e.1).fold(0.0, f64::max);
            assert_eq!(g.a_sub.get(i, nearest), wmax);
            for &(j, w) in row {
                assert!(w > 0.0 && w <= 1.0);
                assert_eq!(g.a_sub.get(j, i), w);
            }
            max_seen = max_seen.max(wmax);
        }
        assert_eq!(max_seen, 1.0);
    }

    #[test]
    fn virtual_sensors_are_cut_from_first_layer() {
        let mut net = network(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        let g = build_graph(&net, 2, None).unwrap();
        assert_eq!(g.a_first, g.a_sub);
        net = net.with_virtual(&[Point::new(0.5, 0.5)]).unwrap();
        let g = build_graph(&net, 2, None).unwrap();
        assert!(g.a_first.row(4).is_empty());
        for i in 0..4 {
            for &(j, w) in g.a_first.row(i) {
                assert_ne!(j, 4);
                assert_eq!(g.a_sub.get(i, j), w);
            }
        }

        let all_virtual: Vec<Sensor> = net
            .sensors()
            .iter()
            .map(|s| Sensor {
                kind: SensorKind::Virtual,
                ..s.clone()
            })
            .collect();
        let net = SensorNetwork::new(all_virtual, net.boundary().clone()).unwrap();
        let g = build_graph(&net, 2, None).unwrap();
        assert_eq!(g.a_first.nnz(), 0);
    }

    #[test]
    fn k_must_be_below_n() {
        let net = network(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]);
        assert!(build_graph(&net, 3, None).is_err());
        assert!(build_graph(&net, 0, None).is_err());
    }
}
