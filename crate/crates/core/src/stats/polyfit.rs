//! Least-squares quadratic fit used to smooth offset-performance curves.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Fits `y ≈ c0 + c1·x + c2·x²` by Householder QR and returns `[c0, c1, c2]`.
pub fn polyfit2(xs: &[f64], ys: &[f64]) -> Result<[f64; 3]> {
    if xs.len() != ys.len() {
        return Err(Error::Argument("polyfit2: xs and ys differ in length".into()));
    }
    let mut distinct = xs.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Fit(format!(
            "polyfit2: rank-deficient design ({} distinct x values)",
            distinct.len()
        )));
    }
    // Centre and scale x so the columns are well conditioned, then map back.
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let scale = xs
        .iter()
        .map(|x| (x - mean).abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let n = xs.len();
    let design = DMatrix::from_fn(n, 3, |i, j| ((xs[i] - mean) / scale).powi(j as i32));
    let rhs = DVector::from_column_slice(ys);
    let qr = design.qr();
    let qty = qr.q().transpose() * rhs;
    let r = qr.r();
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Fit("polyfit2: singular triangular factor".into()))?;
    let (b0, b1, b2) = (beta[0], beta[1], beta[2]);
    // y = b0 + b1 u + b2 u², u = (x - m)/s
    let s2 = scale * scale;
    let c2 = b2 / s2;
    let c1 = b1 / scale - 2.0 * b2 * mean / s2;
    let c0 = b0 - b1 * mean / scale + b2 * mean * mean / s2;
    Ok([c0, c1, c2])
}

pub fn polyval2(c: &[f64; 3], x: f64) -> f64 {
    c[0] + c[1] * x + c[2] * x * x
}
