//! Canonical frequency bands and zero-phase band isolation.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::butterworth::{design_butterworth, FilterKind, SosFilter};
use super::filtfilt::filtfilt;
use crate::error::{Error, Result};
use crate::session::{Matrix, Session};

/// Prototype order of the band filters.
pub const BAND_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Band {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
    Fullband,
}

impl Band {
    pub const ALL: [Band; 6] = [
        Band::Delta,
        Band::Theta,
        Band::Alpha,
        Band::Beta,
        Band::Gamma,
        Band::Fullband,
    ];
    /// The five isolated bands, lowest first.
    pub const ISOLATED: [Band; 5] = [Band::Delta, Band::Theta, Band::Alpha, Band::Beta, Band::Gamma];

    pub fn as_str(&self) -> &'static str {
        match self {
            Band::Delta => "delta",
            Band::Theta => "theta",
            Band::Alpha => "alpha",
            Band::Beta => "beta",
            Band::Gamma => "gamma",
            Band::Fullband => "fullband",
        }
    }

    pub fn spec(self) -> BandSpec {
        let (low_hz, high_hz) = match self {
            Band::Delta => (Some(1.0), Some(4.0)),
            Band::Theta => (Some(4.0), Some(8.0)),
            Band::Alpha => (Some(8.0), Some(12.0)),
            Band::Beta => (Some(12.0), Some(30.0)),
            Band::Gamma => (Some(30.0), None),
            Band::Fullband => (None, None),
        };
        BandSpec {
            band: self,
            low_hz,
            high_hz,
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Band {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Band::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown band {s:?}")))
    }
}

/// Band edges; `None` is an open bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub band: Band,
    pub low_hz: Option<f64>,
    pub high_hz: Option<f64>,
}

impl BandSpec {
    /// Filter for this band at `fs_hz`; `None` for fullband.
    pub fn filter(&self, fs_hz: f64) -> Result<Option<SosFilter>> {
        let f = match (self.low_hz, self.high_hz) {
            (None, None) => return Ok(None),
            (Some(lo), Some(hi)) => design_butterworth(BAND_ORDER, FilterKind::Bandpass, &[lo, hi], fs_hz)?,
            (Some(lo), None) => design_butterworth(BAND_ORDER, FilterKind::Highpass, &[lo], fs_hz)?,
            (None, Some(hi)) => design_butterworth(BAND_ORDER, FilterKind::Lowpass, &[hi], fs_hz)?,
        };
        Ok(Some(f))
    }
}

fn filter_rows(m: &Matrix, f: &SosFilter, ranges: &[Range<usize>]) -> Result<Matrix> {
    let mut out = m.clone();
    for c in 0..m.rows {
        for r in ranges {
            if r.is_empty() {
                continue;
            }
            let y = filtfilt(f, &m.row(c)[r.clone()])?;
            out.row_mut(c)[r.clone()].copy_from_slice(&y);
        }
    }
    Ok(out)
}

/// Filters every channel with the band's zero-phase filter; fullband is the identity.
pub fn band_isolate(s: &Session, band: Band) -> Result<Session> {
    band_isolate_segments(s, band, &[0..s.n_samples()])
}

/// Like [`band_isolate`] but filters each range independently, so no sample
/// in one range influences another. Samples outside every range are kept as is.
pub fn band_isolate_segments(s: &Session, band: Band, ranges: &[Range<usize>]) -> Result<Session> {
    match band.spec().filter(s.sample_rate_hz())? {
        None => Ok(s.clone()),
        Some(f) => s.with_eeg(filter_rows(s.eeg(), &f, ranges)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::welch::welch_psd;
    use crate::session::test_support::labels;
    use crate::session::preprocess_raw;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise_session(c: usize, t: usize, seed: u64) -> Session {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..c * t).map(|_| StandardNormal.sample(&mut rng)).collect();
        let speed = vec![0.0; t];
        Session::new("n", "r", 100.0, Matrix::new(c, t, data).unwrap(), speed, labels(c)).unwrap()
    }

    #[test]
    fn canonical_table() {
        let edges: Vec<_> = Band::ALL.iter().map(|b| (b.spec().low_hz, b.spec().high_hz)).collect();
        assert_eq!(
            edges,
            vec![
                (Some(1.0), Some(4.0)),
                (Some(4.0), Some(8.0)),
                (Some(8.0), Some(12.0)),
                (Some(12.0), Some(30.0)),
                (Some(30.0), None),
                (None, None)
            ]
        );
        assert_eq!("theta".parse::<Band>().unwrap(), Band::Theta);
        assert!("kappa".parse::<Band>().is_err());
    }

    #[test]
    fn fullband_is_identity() {
        let s = noise_session(3, 500, 1);
        let y = band_isolate(&s, Band::Fullband).unwrap();
        assert_eq!(y.eeg(), s.eeg());
    }

    #[test]
    fn delta_keeps_low_frequencies() {
        let s = noise_session(1, 20_000, 2);
        let y = band_isolate(&s, Band::Delta).unwrap();
        let p = welch_psd(y.channel(0), 100.0, 1024, 0.5).unwrap();
        let below: f64 = p.frequencies.iter().zip(&p.power).filter(|(f, _)| **f < 5.0).map(|(_, v)| v).sum();
        let total: f64 = p.power.iter().sum();
        assert!(below / total >= 0.95, "fraction {}", below / total);
        assert_eq!(y.speed(), s.speed());
    }

    #[test]
    fn bands_approximately_reconstruct() {
        // Broadband input limited like ingested data (45 Hz lowpass at the raw rate).
        let raw = noise_session(1, 200_000, 3);
        let m = preprocess_raw(raw.eeg(), 1000.0).unwrap();
        let s = Session::new("n", "r", 100.0, m, vec![0.0; 20_000], labels(1)).unwrap();
        let mut sum = vec![0.0; s.n_samples()];
        for b in Band::ISOLATED {
            let y = band_isolate(&s, b).unwrap();
            sum.iter_mut().zip(y.channel(0)).for_each(|(a, v)| *a += v);
        }
        let x = s.channel(0);
        let mu = x.iter().sum::<f64>() / x.len() as f64;
        let err: f64 = sum.iter().zip(x).map(|(a, b)| (a - (b - mu)).powi(2)).sum();
        let energy: f64 = x.iter().map(|b| (b - mu).powi(2)).sum();
        assert!(err / energy <= 0.15, "relative residual energy {}", err / energy);
    }

    #[test]
    fn segments_are_filtered_independently() {
        let s = noise_session(2, 600, 4);
        let a = band_isolate_segments(&s, Band::Theta, &[0..300, 300..600]).unwrap();
        let mut t = s.eeg().clone();
        for c in 0..2 {
            t.row_mut(c)[300..].iter_mut().for_each(|v| *v = 0.0);
        }
        let b = band_isolate_segments(&s.with_eeg(t).unwrap(), Band::Theta, &[0..300, 300..600]).unwrap();
        for c in 0..2 {
            assert_eq!(&a.channel(c)[..300], &b.channel(c)[..300]);
        }
    }
}
