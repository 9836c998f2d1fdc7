use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Matrix, Session};
use crate::error::{Error, Result};

/// Floor applied to per-channel standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Channel-wise z-score parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose std was floored.
    pub warnings: Vec<String>,
}

impl Normalizer {
    pub fn identity(c: usize) -> Self {
        Self {
            mean: vec![0.0; c],
            std: vec![1.0; c],
            warnings: Vec::new(),
        }
    }

    pub fn n_channels(&self) -> usize {
        self.mean.len()
    }

    /// Fits mean and population std of each row of `m` over columns `range`.
    pub fn fit_matrix(m: &Matrix, range: Range<usize>) -> Result<Self> {
        if range.is_empty() || range.end > m.cols {
            return Err(Error::Argument(format!(
                "normalizer fit range {range:?} invalid for {} samples",
                m.cols
            )));
        }
        let n = range.len() as f64;
        let mut mean = Vec::with_capacity(m.rows);
        let mut std = Vec::with_capacity(m.rows);
        let mut warnings = Vec::new();
        for c in 0..m.rows {
            let xs = &m.row(c)[range.clone()];
            let mu = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
            let mut sd = var.sqrt();
            if !(sd > STD_FLOOR) {
                let msg = format!("channel {c} has near-zero variance; std floored at {STD_FLOOR}");
                log::warn!("{msg}");
                warnings.push(msg);
                sd = STD_FLOOR;
            }
            mean.push(mu);
            std.push(sd);
        }
        Ok(Self {
            mean,
            std,
            warnings,
        })
    }

    pub fn apply(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        let mut out = m.clone();
        for c in 0..m.rows {
            let (mu, sd) = (self.mean[c], self.std[c]);
            out.row_mut(c).iter_mut().for_each(|v| *v = (*v - mu) / sd);
        }
        Ok(out)
    }

    pub fn invert(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        let mut out = m.clone();
        for c in 0..m.rows {
            let (mu, sd) = (self.mean[c], self.std[c]);
            out.row_mut(c).iter_mut().for_each(|v| *v = *v * sd + mu);
        }
        Ok(out)
    }

    fn check(&self, m: &Matrix) -> Result<()> {
        if m.rows != self.mean.len() {
            return Err(Error::shape("normalizer", &[self.mean.len()], &[m.rows]));
        }
        Ok(())
    }

    /// Applies to a session's channels, leaving speed untouched.
    pub fn apply_session(&self, s: &Session) -> Result<Session> {
        s.with_eeg(self.apply(s.eeg())?)
    }
}

pub fn fit_normalizer(s: &Session, range: Range<usize>) -> Result<Normalizer> {
    Normalizer::fit_matrix(s.eeg(), range)
}

pub fn apply_normalizer(n: &Normalizer, m: &Matrix) -> Result<Matrix> {
    n.apply(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn analytic_three_values() {
        let m = Matrix::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let n = Normalizer::fit_matrix(&m, 0..3).unwrap();
        assert!((n.mean[0] - 2.0).abs() < 1e-12);
        assert!((n.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let z = n.apply(&m).unwrap();
        for (a, b) in z.data.iter().zip([-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_segment_is_standardised() {
        let data: Vec<f64> = (0..400).map(|i| ((i * 37) % 101) as f64 * 0.3 + 5.0).collect();
        let m = Matrix::new(2, 200, data).unwrap();
        let n = Normalizer::fit_matrix(&m, 0..160).unwrap();
        let z = n.apply(&m).unwrap();
        for c in 0..2 {
            let xs = &z.row(c)[..160];
            let mu = xs.iter().sum::<f64>() / 160.0;
            let sd = (xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / 160.0).sqrt();
            assert!(mu.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_channel_is_floored() {
        let m = Matrix::new(1, 5, vec![4.0; 5]).unwrap();
        let n = Normalizer::fit_matrix(&m, 0..5).unwrap();
        assert_eq!(n.std[0], STD_FLOOR);
        assert_eq!(n.warnings.len(), 1);
        assert!(n.apply(&m).unwrap().data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn empty_range_is_rejected() {
        let m = Matrix::new(1, 5, vec![1.0; 5]).unwrap();
        assert!(Normalizer::fit_matrix(&m, 2..2).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(xs in prop::collection::vec(-1e3f64..1e3, 8..64)) {
            let n = xs.len() / 2;
            let m = Matrix::new(2, n, xs[..2 * n].to_vec()).unwrap();
            let norm = Normalizer::fit_matrix(&m, 0..n).unwrap();
            let back = norm.invert(&norm.apply(&m).unwrap()).unwrap();
            for (a, b) in back.data.iter().zip(&m.data) {
                prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
            }
        }
    }
}
