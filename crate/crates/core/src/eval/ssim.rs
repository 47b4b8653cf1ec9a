use crate::error::{Error, Result};

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;

fn gaussian_window() -> [f64; WINDOW * WINDOW] {
    let half = (WINDOW / 2) as f64;
    let g: Vec<f64> = (0..WINDOW)
        .map(|k| (-((k as f64 - half).powi(2)) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let mut w = [0.0; WINDOW * WINDOW];
    for r in 0..WINDOW {
        for c in 0..WINDOW {
            w[r * WINDOW + c] = g[r] * g[c];
        }
    }
    w
}

fn joint_range(a: &[f64], b: &[f64]) -> f64 {
    let (lo, hi) = a
        .iter()
        .chain(b)
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi > lo {
        hi - lo
    } else {
        1.0
    }
}

/// Mean SSIM of two row-major `width × height` images with an 11×11 Gaussian
/// window (σ = 1.5). The dynamic range is the joint range of both images
/// (1 when both are constant and equal). Non-finite pixels are treated as
/// missing in both images.
pub fn ssim(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<f64> {
    ssim_with_range(a, b, width, height, joint_range(a, b))
}

/// As [`ssim`] with an explicit dynamic range `range`.
pub fn ssim_with_range(a: &[f64], b: &[f64], width: usize, height: usize, range: f64) -> Result<f64> {
    if a.len() != width * height || b.len() != width * height {
        return Err(Error::Shape(format!(
            "images of {} and {} pixels for a {width}×{height} grid",
            a.len(),
            b.len()
        )));
    }
    if width < WINDOW || height < WINDOW {
        return Err(Error::Shape(format!("SSIM needs at least {WINDOW}×{WINDOW} pixels")));
    }
    if !(range > 0.0) {
        return Err(Error::Config(format!("dynamic range must be positive, got {range}")));
    }
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let window = gaussian_window();
    let valid = |i: usize| a[i].is_finite() && b[i].is_finite();
    let (mut total, mut count) = (0.0, 0usize);
    for r0 in 0..=height - WINDOW {
        for c0 in 0..=width - WINDOW {
            let centre = (r0 + WINDOW / 2) * width + c0 + WINDOW / 2;
            if !valid(centre) {
                continue;
            }
            let (mut wsum, mut ma, mut mb) = (0.0, 0.0, 0.0);
            for r in 0..WINDOW {
                for c in 0..WINDOW {
                    let i = (r0 + r) * width + c0 + c;
                    if valid(i) {
                        let w = window[r * WINDOW + c];
                        wsum += w;
                        ma += w * a[i];
                        mb += w * b[i];
                    }
                }
            }
            ma /= wsum;
            mb /= wsum;
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for r in 0..WINDOW {
                for c in 0..WINDOW {
                    let i = (r0 + r) * width + c0 + c;
                    if valid(i) {
                        let w = window[r * WINDOW + c] / wsum;
                        let (da, db) = (a[i] - ma, b[i] - mb);
                        va += w * da * da;
                        vb += w * db * db;
                        cov += w * da * db;
                    }
                }
            }
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty("no valid SSIM windows".into()));
    }
    Ok(total / count as f64)
}
