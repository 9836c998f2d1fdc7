use super::{Matrix, CANONICAL_RATE_HZ};
use crate::dsp::butterworth::{design_butterworth, FilterKind};
use crate::dsp::filtfilt::filtfilt;
use crate::error::{Error, Result};

/// Anti-alias corner applied before decimation.
pub const LOWPASS_HZ: f64 = 45.0;
pub const LOWPASS_ORDER: usize = 2;

/// Zero-phase 45 Hz lowpass at the raw rate, then decimation to 100 Hz.
pub fn preprocess_raw(raw: &Matrix, raw_rate_hz: f64) -> Result<Matrix> {
    let ratio = raw_rate_hz / CANONICAL_RATE_HZ;
    if !(ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9) {
        return Err(Error::UnsupportedRate {
            rate_hz: raw_rate_hz,
            reason: format!("not an integer multiple of {CANONICAL_RATE_HZ} Hz"),
        });
    }
    let ratio = ratio.round() as usize;
    let filter = design_butterworth(LOWPASS_ORDER, FilterKind::Lowpass, &[LOWPASS_HZ], raw_rate_hz)?;
    let out_len = raw.cols.div_ceil(ratio);
    let mut out = Matrix::zeros(raw.rows, out_len);
    for c in 0..raw.rows {
        let y = filtfilt(&filter, raw.row(c))?;
        for (dst, src) in out.row_mut(c).iter_mut().zip(y.iter().step_by(ratio)) {
            *dst = *src;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(f: f64, fs: f64, secs: f64) -> Matrix {
        let n = (fs * secs) as usize;
        Matrix::new(1, n, (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect()).unwrap()
    }

    fn interior_peak(x: &[f64]) -> f64 {
        x[100..x.len() - 100].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn six_hz_survives() {
        let y = preprocess_raw(&sine(6.0, 1000.0, 10.0), 1000.0).unwrap();
        assert_eq!(y.cols, 1000);
        let expect = sine(6.0, 100.0, 10.0);
        let amp = interior_peak(y.row(0));
        assert!((amp - 1.0).abs() < 0.01, "amp {amp}");
        for i in 100..900 {
            assert!((y.data[i] - expect.data[i]).abs() < 0.01);
        }
    }

    #[test]
    fn sixty_hz_is_attenuated() {
        let y = preprocess_raw(&sine(60.0, 1000.0, 10.0), 1000.0).unwrap();
        assert!(interior_peak(y.row(0)) < 0.5);
    }

    #[test]
    fn constant_is_kept() {
        let m = Matrix::new(2, 500, vec![3.25; 1000]).unwrap();
        let y = preprocess_raw(&m, 500.0).unwrap();
        assert!(y.data.iter().all(|v| (v - 3.25).abs() < 1e-9));
    }

    #[test]
    fn non_integer_ratio_is_rejected() {
        let m = Matrix::zeros(1, 500);
        assert!(matches!(preprocess_raw(&m, 250.0), Err(Error::UnsupportedRate { .. })));
        assert!(matches!(preprocess_raw(&m, 50.0), Err(Error::UnsupportedRate { .. })));
    }
}
