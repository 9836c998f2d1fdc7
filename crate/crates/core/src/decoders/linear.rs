//! Closed-form least squares for the linear family.

use nalgebra::{DMatrix, DVector};

use super::{f32_round, Decoder, DecoderState, Family};
use crate::autodiff::{tensor::gemm, Tensor};
use crate::error::{Error, Result};

/// Relative ridge added to the normal equations for numerical safety.
pub const RIDGE: f64 = 1e-8;

/// Least-squares weights and intercept for `y ≈ X w + b` (`X` is `[N, D]`).
///
/// Solved on centred columns through the normal equations with a tiny ridge
/// `RIDGE · trace/D`, which keeps nearly collinear window columns solvable.
pub fn lstsq(x: &Tensor, y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let (n, d) = match x.shape() {
        [n, d] => (*n, *d),
        s => return Err(Error::shape("lstsq", &[0, 0], s)),
    };
    if n != y.len() || n < 2 {
        return Err(Error::Fit(format!("lstsq needs >= 2 matching rows, got {n} and {}", y.len())));
    }
    let mut xm = vec![0.0; d];
    for row in x.data().chunks(d) {
        xm.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    xm.iter_mut().for_each(|m| *m /= n as f64);
    let ym = y.iter().sum::<f64>() / n as f64;
    let mut xc = x.data().to_vec();
    for row in xc.chunks_mut(d) {
        row.iter_mut().zip(&xm).for_each(|(v, m)| *v -= m);
    }
    let mut xtx = vec![0.0; d * d];
    gemm(d, n, d, &xc, (1, d), &xc, (d, 1), 0.0, &mut xtx, (d, 1));
    let yc: Vec<f64> = y.iter().map(|v| v - ym).collect();
    let mut xty = vec![0.0; d];
    gemm(d, n, 1, &xc, (1, d), &yc, (1, 1), 0.0, &mut xty, (1, 1));

    let trace: f64 = (0..d).map(|i| xtx[i * d + i]).sum();
    let lambda = RIDGE * (trace / d as f64).max(f64::MIN_POSITIVE);
    for i in 0..d {
        xtx[i * d + i] += lambda;
    }
    let a = DMatrix::from_row_slice(d, d, &xtx);
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Fit("normal equations are not positive definite".into()))?;
    let w = chol.solve(&DVector::from_vec(xty));
    let b = ym - w.iter().zip(&xm).map(|(wi, mi)| wi * mi).sum::<f64>();
    Ok((w.iter().copied().collect(), b))
}

/// Fits a linear decoder in place; weights are rounded to `f32`.
pub fn fit_linear(dec: &mut Decoder, x: &Tensor, y: &[f64]) -> Result<()> {
    if dec.family() != Family::Linear {
        return Err(Error::SpecMismatch(format!("lstsq on a {} decoder", dec.family())));
    }
    let (w, b) = lstsq(x, y)?;
    dec.target = Default::default();
    let DecoderState::Net(p) = &mut dec.state else {
        unreachable!("linear decoders hold tensors")
    };
    for (name, t) in p.tensors.iter_mut() {
        match name.as_str() {
            "head.out.w" => t.data_mut().iter_mut().zip(&w).for_each(|(d, s)| *d = f32_round(*s)),
            "head.out.b" => t.data_mut()[0] = f32_round(b),
            _ => {}
        }
    }
    Ok(())
}
