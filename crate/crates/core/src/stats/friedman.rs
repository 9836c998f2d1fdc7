//! Friedman rank test for repeated measures across decoding variants.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::quantile::{average_ranks, tie_groups};
use super::{PairedScores, TestOutcome};
use crate::error::{Error, Result};

/// Friedman chi-square on within-row ranks (average ranks for ties, with the
/// usual tie correction). Degrees of freedom are `k - 1`.
pub fn friedman(scores: &PairedScores) -> Result<TestOutcome> {
    let n = scores.n_rows();
    let k = scores.n_cols();
    if k < 2 {
        return Err(Error::Argument(format!("friedman needs >= 2 variants, got {k}")));
    }
    if n < 3 {
        return Err(Error::Argument(format!("friedman needs >= 3 sessions, got {n}")));
    }
    let mut rank_sums = vec![0.0; k];
    let mut tie_term = 0.0;
    for row in scores.rows() {
        for (j, r) in average_ranks(row).into_iter().enumerate() {
            rank_sums[j] += r;
        }
        tie_term += tie_groups(row)
            .into_iter()
            .map(|t| (t * t * t - t) as f64)
            .sum::<f64>();
    }
    let (nf, kf) = (n as f64, k as f64);
    let correction = 1.0 - tie_term / (nf * (kf * kf * kf - kf));
    let statistic = if correction <= 1e-12 {
        // every row fully tied
        0.0
    } else {
        let ssr: f64 = rank_sums.iter().map(|r| r * r).sum();
        let raw = 12.0 / (nf * kf * (kf + 1.0)) * ssr - 3.0 * nf * (kf + 1.0);
        (raw / correction).max(0.0)
    };
    let chi = ChiSquared::new(kf - 1.0).map_err(|e| Error::Argument(e.to_string()))?;
    let p = if statistic == 0.0 {
        1.0
    } else {
        chi.sf(statistic).clamp(0.0, 1.0)
    };
    Ok(TestOutcome {
        statistic,
        p_raw: p,
        p_adjusted: p,
        n,
        method: format!("friedman_chi2({})", k - 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_columns_give_zero() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64; 3]).collect();
        let s = PairedScores::from_rows(vec!["a".into(), "b".into(), "c".into()], rows).unwrap();
        let out = friedman(&s).unwrap();
        assert_eq!(out.statistic, 0.0);
        assert_eq!(out.p_raw, 1.0);
    }

    #[test]
    fn matches_reference_value() {
        // scipy.stats.friedmanchisquare on the columns below
        let rows = vec![
            vec![0.81, 0.70, 0.88],
            vec![0.75, 0.72, 0.91],
            vec![0.66, 0.69, 0.85],
            vec![0.90, 0.80, 0.93],
            vec![0.71, 0.71, 0.80],
            vec![0.62, 0.58, 0.77],
        ];
        let s = PairedScores::from_rows(vec!["a".into(), "b".into(), "c".into()], rows).unwrap();
        let out = friedman(&s).unwrap();
        assert!((out.statistic - SCIPY_STAT).abs() < 1e-10, "{}", out.statistic);
        assert!((out.p_raw - SCIPY_P).abs() < 1e-10, "{}", out.p_raw);
    }

    const SCIPY_STAT: f64 = 10.173_913_043_478_26;
    const SCIPY_P: f64 = 0.006_176_790_235_910_907;

    #[test]
    fn too_few_rows() {
        let s = PairedScores::from_rows(
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 2.0], vec![2.0, 1.0]],
        )
        .unwrap();
        assert!(friedman(&s).is_err());
    }
}
