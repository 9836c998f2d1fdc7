//! Lagged Pearson autocorrelation of a scalar trace.

use crate::error::{Error, Result};
use crate::stats::pearson_r;

/// `r(k) = corr(x[0..n-k], x[k..n])` for `k = 0..=max_lag`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if x.len() <= max_lag + 1 {
        return Err(Error::Argument(format!(
            "autocorrelation: need more than {} samples for max_lag {max_lag}, got {}",
            max_lag + 1,
            x.len()
        )));
    }
    let first = x[0];
    if x.iter().all(|v| *v == first) {
        return Err(Error::UndefinedCorrelation(
            "autocorrelation of a constant trace".into(),
        ));
    }
    let n = x.len();
    (0..=max_lag)
        .map(|k| {
            if k == 0 {
                Ok(1.0)
            } else {
                pearson_r(&x[..n - k], &x[k..])
            }
        })
        .collect()
}

/// Two-sided curve over lags `-max_lag..=max_lag` (in samples). The sequence is
/// symmetric by definition since `corr(x_t, x_{t+k}) = corr(x_{t-k}, x_t)`.
pub fn autocorrelation_curve(x: &[f64], max_lag: usize) -> Result<Vec<(i64, f64)>> {
    let one = autocorrelation(x, max_lag)?;
    let mut out: Vec<(i64, f64)> = one
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .map(|(k, r)| (-(k as i64), *r))
        .collect();
    out.extend(one.iter().enumerate().map(|(k, r)| (k as i64, *r)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn lag_zero_is_one_and_constant_errors() {
        let x = [1.0, 3.0, 2.0, 5.0];
        assert_eq!(autocorrelation(&x, 1).unwrap()[0], 1.0);
        assert!(matches!(
            autocorrelation(&[2.0; 10], 3),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn periodic_signal() {
        let x: Vec<f64> = (0..2000)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / 50.0).sin())
            .collect();
        assert!(autocorrelation(&x, 50).unwrap()[50] >= 0.99);
    }

    #[test]
    fn reversal_gives_same_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut xr = x.clone();
        xr.reverse();
        let a = autocorrelation(&x, 40).unwrap();
        let b = autocorrelation(&xr, 40).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn curve_layout() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.3).sin()).collect();
        let c = autocorrelation_curve(&x, 5).unwrap();
        assert_eq!(c.len(), 11);
        assert_eq!(c[0].0, -5);
        assert_eq!(c[5], (0, 1.0));
        assert_eq!(c[0].1, c[10].1);
    }
}
