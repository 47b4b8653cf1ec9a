//! Dense LU factorisation with partial pivoting for the small RBF systems.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Lu {
    n: usize,
    /// Row-major combined L (unit diagonal, below) and U (on and above).
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    /// Factor a row-major `n × n` matrix. Pivots below `1e-14·max|a|` are singular.
    pub fn factor(n: usize, mut a: Vec<f64>) -> Result<Self> {
        assert_eq!(a.len(), n * n, "matrix size");
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Singular);
        }
        let tol = scale * 1e-14;
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pv) =
                (k..n)
                    .map(|r| (r, a[r * n + k].abs()))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pv <= tol {
                return Err(Error::Singular);
            }
            if p != k {
                for c in 0..n {
                    a.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let d = a[k * n + k];
            for r in k + 1..n {
                let f = a[r * n + k] / d;
                a[r * n + k] = f;
                if f != 0.0 {
                    for c in k + 1..n {
                        a[r * n + c] -= f * a[k * n + c];
                    }
                }
            }
        }
        Ok(Self { n, lu: a, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            let row = &self.lu[r * n..r * n + r];
            x[r] = row.iter().zip(&x[..r]).fold(x[r], |s, (a, v)| s - a * v);
        }
        for r in (0..n).rev() {
            let row = &self.lu[r * n + r + 1..(r + 1) * n];
            let s = row.iter().zip(&x[r + 1..]).fold(x[r], |s, (a, v)| s - a * v);
            x[r] = s / self.lu[r * n + r];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_with_pivoting() {
        let a = vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0];
        let lu = Lu::factor(3, a.clone()).unwrap();
        let x = lu.solve(&[3.0, 2.0, 4.0]);
        for r in 0..3 {
            let ax: f64 = (0..3).map(|c| a[r * 3 + c] * x[c]).sum();
            assert!((ax - [3.0, 2.0, 4.0][r]).abs() < 1e-12);
        }
    }

    #[test]
    fn detects_singular() {
        assert!(matches!(Lu::factor(2, vec![1.0, 2.0, 2.0, 4.0]), Err(Error::Singular)));
        assert!(matches!(Lu::factor(1, vec![0.0]), Err(Error::Singular)));
    }
}
