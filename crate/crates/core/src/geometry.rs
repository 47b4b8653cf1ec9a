//! Planar geometry on lng/lat degrees: polygons, hulls, clipping and grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist2(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn dist(self, other: Point) -> f64 {
        self.dist2(other).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn of_points<'a>(points: impl IntoIterator<Item = &'a Point>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = BBox {
            min_x: first.x,
            min_y: first.y,
            max_x: first.x,
            max_y: first.y,
        };
        for p in it {
            b.min_x = b.min_x.min(p.x);
            b.min_y = b.min_y.min(p.y);
            b.max_x = b.max_x.max(p.x);
            b.max_y = b.max_y.max(p.y);
        }
        Some(b)
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.min_x + self.max_x), 0.5 * (self.min_y + self.max_y))
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    pub fn to_polygon(&self) -> Polygon {
        Polygon::new(vec![
            Point::new(self.min_x, self.min_y),
            Point::new(self.max_x, self.min_y),
            Point::new(self.max_x, self.max_y),
            Point::new(self.min_x, self.max_y),
        ])
    }

    /// Grow every side by `margin`.
    pub fn padded(&self, margin: f64) -> BBox {
        BBox {
            min_x: self.min_x - margin,
            min_y: self.min_y - margin,
            max_x: self.max_x + margin,
            max_y: self.max_y + margin,
        }
    }
}

/// A simple polygon stored as an open ring (first vertex not repeated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    ring: Vec<Point>,
}

impl Polygon {
    pub fn new(mut ring: Vec<Point>) -> Self {
        if ring.len() > 1 && ring.first() == ring.last() {
            ring.pop();
        }
        Self { ring }
    }

    pub fn ring(&self) -> &[Point] {
        &self.ring
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.ring.len();
        (0..n).map(move |i| (self.ring[i], self.ring[(i + 1) % n]))
    }

    pub fn signed_area(&self) -> f64 {
        0.5 * self.edges().map(|(a, b)| a.x * b.y - b.x * a.y).sum::<f64>()
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Area centroid. Falls back to the vertex mean for zero-area rings.
    pub fn centroid(&self) -> Point {
        let a = self.signed_area();
        if a.abs() < 1e-300 || self.ring.len() < 3 {
            let n = self.ring.len().max(1) as f64;
            let sx: f64 = self.ring.iter().map(|p| p.x).sum();
            let sy: f64 = self.ring.iter().map(|p| p.y).sum();
            return Point::new(sx / n, sy / n);
        }
        // Shift to the first vertex to limit cancellation.
        let o = self.ring[0];
        let (mut cx, mut cy) = (0.0, 0.0);
        for (p, q) in self.edges() {
            let (px, py) = (p.x - o.x, p.y - o.y);
            let (qx, qy) = (q.x - o.x, q.y - o.y);
            let cross = px * qy - qx * py;
            cx += (px + qx) * cross;
            cy += (py + qy) * cross;
        }
        Point::new(o.x + cx / (6.0 * a), o.y + cy / (6.0 * a))
    }

    pub fn bbox(&self) -> BBox {
        BBox::of_points(&self.ring).unwrap_or(BBox {
            min_x: 0.0,
            min_y: 0.0,
            max_x: 0.0,
            max_y: 0.0,
        })
    }

    /// Point-in-polygon test that counts points on an edge as inside.
    pub fn contains(&self, p: Point) -> bool {
        let scale = self.bbox().diagonal().max(1.0);
        let tol = 1e-12 * scale;
        for (a, b) in self.edges() {
            if on_segment(p, a, b, tol) {
                return true;
            }
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Keep the part of the polygon on the side `a·x + b·y <= c`.
    pub fn clip_half_plane(&self, a: f64, b: f64, c: f64) -> Polygon {
        let n = self.ring.len();
        let mut out = Vec::with_capacity(n + 2);
        for i in 0..n {
            let p = self.ring[i];
            let q = self.ring[(i + 1) % n];
            let fp = a * p.x + b * p.y - c;
            let fq = a * q.x + b * q.y - c;
            if fp <= 0.0 {
                out.push(p);
            }
            if (fp < 0.0 && fq > 0.0) || (fp > 0.0 && fq < 0.0) {
                let t = fp / (fp - fq);
                out.push(Point::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)));
            }
        }
        Polygon { ring: out }
    }

    pub fn to_counter_clockwise(mut self) -> Polygon {
        if self.signed_area() < 0.0 {
            self.ring.reverse();
        }
        self
    }
}

fn on_segment(p: Point, a: Point, b: Point, tol: f64) -> bool {
    let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    let len = a.dist(b);
    if cross.abs() > tol * len.max(1.0) {
        return false;
    }
    p.x >= a.x.min(b.x) - tol && p.x <= a.x.max(b.x) + tol && p.y >= a.y.min(b.y) - tol && p.y <= a.y.max(b.y) + tol
}

/// Convex hull via Andrew's monotone chain, counter-clockwise, collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: Point, a: Point, b: Point| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Offset every edge of a convex counter-clockwise polygon outward by `distance`
/// (mitred corners).
pub fn offset_convex(polygon: &Polygon, distance: f64) -> Polygon {
    let ring = polygon.ring();
    let n = ring.len();
    // Each edge as a line n·p = c with outward unit normal n.
    let lines: Vec<(f64, f64, f64)> = (0..n)
        .map(|i| {
            let a = ring[i];
            let b = ring[(i + 1) % n];
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let len = dx.hypot(dy);
            let (nx, ny) = (dy / len, -dx / len);
            (nx, ny, nx * a.x + ny * a.y + distance)
        })
        .collect();
    let verts = (0..n)
        .map(|i| {
            let (a1, b1, c1) = lines[(i + n - 1) % n];
            let (a2, b2, c2) = lines[i];
            let det = a1 * b2 - a2 * b1;
            Point::new((c1 * b2 - c2 * b1) / det, (a1 * c2 - a2 * c1) / det)
        })
        .collect();
    Polygon::new(verts)
}

/// Convex hull of `points` grown by `fraction` of its bounding-box diagonal.
pub fn expanded_hull(points: &[Point], fraction: f64) -> Result<Polygon> {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return Err(Error::DegenerateDomain(
            "sensors are collinear or coincident; cannot build a hull".into(),
        ));
    }
    let poly = Polygon::new(hull);
    if poly.area() <= 0.0 {
        return Err(Error::DegenerateDomain("hull has zero area".into()));
    }
    let d = fraction * poly.bbox().diagonal();
    Ok(offset_convex(&poly, d))
}

/// Regular grid of square-ish cells laid over a bounding box, row 0 at the top
/// (largest latitude) so rows map directly onto image rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bounds: BBox,
    pub width: usize,
    pub height: usize,
}

impl GridSpec {
    pub fn new(bounds: BBox, width: usize, height: usize) -> Self {
        Self { bounds, width, height }
    }

    /// Grid with `cells` cells along the longer side and the same aspect as `bounds`.
    pub fn with_long_side(bounds: BBox, cells: usize) -> Self {
        let (w, h) = (bounds.width(), bounds.height());
        let cells = cells.max(1);
        let (width, height) = if w >= h {
            (cells, ((cells as f64) * h / w).round().max(1.0) as usize)
        } else {
            (((cells as f64) * w / h).round().max(1.0) as usize, cells)
        };
        Self::new(bounds, width, height)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_width(&self) -> f64 {
        self.bounds.width() / self.width as f64
    }

    pub fn cell_height(&self) -> f64 {
        self.bounds.height() / self.height as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_width() * self.cell_height()
    }

    pub fn center(&self, row: usize, col: usize) -> Point {
        Point::new(
            self.bounds.min_x + (col as f64 + 0.5) * self.cell_width(),
            self.bounds.max_y - (row as f64 + 0.5) * self.cell_height(),
        )
    }

    pub fn center_of(&self, index: usize) -> Point {
        self.center(index / self.width, index % self.width)
    }

    /// Cell holding `p`, clamping points on the outer edges inward.
    pub fn locate(&self, p: Point) -> Option<(usize, usize)> {
        if !self.bounds.contains(p) {
            return None;
        }
        let col = ((p.x - self.bounds.min_x) / self.cell_width()).floor() as usize;
        let row = ((self.bounds.max_y - p.y) / self.cell_height()).floor() as usize;
        Some((row.min(self.height - 1), col.min(self.width - 1)))
    }

    /// Boolean mask of cell centres lying inside `polygon`.
    pub fn inside_mask(&self, polygon: &Polygon) -> Vec<bool> {
        (0..self.len()).map(|i| polygon.contains(self.center_of(i))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Polygon {
        BBox {
            min_x: 0.0,
            min_y: 0.0,
            max_x: 1.0,
            max_y: 1.0,
        }
        .to_polygon()
    }

    #[test]
    fn square_area_and_centroid() {
        let sq = unit_square();
        assert!((sq.area() - 1.0).abs() < 1e-15);
        let c = sq.centroid();
        assert!((c.x - 0.5).abs() < 1e-15 && (c.y - 0.5).abs() < 1e-15);
    }

    #[test]
    fn containment_counts_edges() {
        let sq = unit_square();
        assert!(sq.contains(Point::new(0.5, 0.5)));
        assert!(sq.contains(Point::new(1.0, 0.3)));
        assert!(sq.contains(Point::new(0.0, 0.0)));
        assert!(!sq.contains(Point::new(1.0001, 0.5)));
    }

    #[test]
    fn hull_drops_interior_and_collinear_points() {
        let pts = [
            Point::new(0.0, 0.0),
            Point::new(0.5, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.2, 0.2),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ];
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert!(Polygon::new(hull).signed_area() > 0.0);
    }

    #[test]
    fn half_plane_clip_halves_square() {
        let half = unit_square().clip_half_plane(1.0, 0.0, 0.5);
        assert!((half.area() - 0.5).abs() < 1e-15);
        assert!((half.centroid().x - 0.25).abs() < 1e-15);
    }

    #[test]
    fn grid_rows_run_north_to_south() {
        let g = GridSpec::new(
            BBox {
                min_x: 0.0,
                min_y: 0.0,
                max_x: 4.0,
                max_y: 2.0,
            },
            4,
            2,
        );
        assert_eq!(g.center(0, 0), Point::new(0.5, 1.5));
        assert_eq!(g.locate(Point::new(3.9, 0.1)), Some((1, 3)));
        assert_eq!(g.locate(Point::new(4.0, 2.0)), Some((0, 3)));
        let g2 = GridSpec::with_long_side(g.bounds, 8);
        assert_eq!((g2.width, g2.height), (8, 4));
    }
}
