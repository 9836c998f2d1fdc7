//! Percentile bootstrap interval for the median.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::quantile::{median, median_in_place, quantile_sorted};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MedianCi {
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Resamples `x` with replacement `n_boot` times and returns the sample median
/// together with the `(1 - level) / 2` and `(1 + level) / 2` percentiles of the
/// resampled medians. Deterministic for a given seed.
pub fn bootstrap_median_ci(x: &[f64], n_boot: usize, level: f64, seed: u64) -> Result<MedianCi> {
    if x.len() < 3 {
        return Err(Error::Argument(format!(
            "bootstrap_median_ci needs n >= 3, got {}",
            x.len()
        )));
    }
    if n_boot == 0 || !(0.0..1.0).contains(&level) {
        return Err(Error::Argument("invalid n_boot or level".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let mut buf = vec![0.0; n];
    let mut meds = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        for slot in buf.iter_mut() {
            *slot = x[rng.random_range(0..n)];
        }
        meds.push(median_in_place(&mut buf).expect("nonempty"));
    }
    meds.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    Ok(MedianCi {
        median: median(x).expect("nonempty"),
        lo: quantile_sorted(&meds, alpha / 2.0),
        hi: quantile_sorted(&meds, 1.0 - alpha / 2.0),
    })
}
