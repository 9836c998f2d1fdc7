//! Two-sided Wilcoxon signed-rank test for paired session scores.

use statrs::distribution::{ContinuousCDF, Normal};

use super::quantile::average_ranks;
use super::TestOutcome;
use crate::error::{Error, Result};

/// Largest number of nonzero differences handled by the exact null distribution.
pub const EXACT_MAX_N: usize = 25;

/// Treatment of zero paired differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroMethod {
    /// Drop zeros before ranking (Wilcoxon's original rule).
    #[default]
    Wilcox,
    /// Rank zeros together with the other magnitudes, then drop their ranks.
    Pratt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PMethod {
    Auto,
    Exact,
    Normal,
}

/// Two-sided test with the default zero rule and automatic method choice.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<TestOutcome> {
    wilcoxon_signed_rank_with(a, b, ZeroMethod::Wilcox, PMethod::Auto)
}

pub fn wilcoxon_signed_rank_with(
    a: &[f64],
    b: &[f64],
    zeros: ZeroMethod,
    method: PMethod,
) -> Result<TestOutcome> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "wilcoxon: unpaired inputs ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let ranks_and_signs: Vec<(f64, bool)> = match zeros {
        ZeroMethod::Wilcox => {
            let nz: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
            let mags: Vec<f64> = nz.iter().map(|v| v.abs()).collect();
            average_ranks(&mags)
                .into_iter()
                .zip(&nz)
                .map(|(r, v)| (r, *v > 0.0))
                .collect()
        }
        ZeroMethod::Pratt => {
            let mags: Vec<f64> = d.iter().map(|v| v.abs()).collect();
            average_ranks(&mags)
                .into_iter()
                .zip(&d)
                .filter(|(_, v)| **v != 0.0)
                .map(|(r, v)| (r, *v > 0.0))
                .collect()
        }
    };
    let n = ranks_and_signs.len();
    if n == 0 {
        return Err(Error::DegenerateData(
            "wilcoxon: all paired differences are zero".into(),
        ));
    }
    let w_plus: f64 = ranks_and_signs
        .iter()
        .filter(|(_, pos)| *pos)
        .map(|(r, _)| r)
        .sum();
    let total: f64 = ranks_and_signs.iter().map(|(r, _)| r).sum();
    let w_minus = total - w_plus;
    let t = w_plus.min(w_minus);
    let ranks: Vec<f64> = ranks_and_signs.iter().map(|(r, _)| *r).collect();

    let use_exact = match method {
        PMethod::Auto => n <= EXACT_MAX_N,
        PMethod::Exact => true,
        PMethod::Normal => false,
    };
    let (p, label) = if use_exact {
        (exact_two_sided(&ranks, t), "wilcoxon_exact")
    } else {
        (normal_two_sided(&ranks, w_plus), "wilcoxon_normal")
    };
    Ok(TestOutcome {
        statistic: t,
        p_raw: p,
        p_adjusted: p,
        n,
        method: label.into(),
    })
}

/// `2 * P(W <= t)` under random signs, ranks doubled so half-ranks stay integral.
fn exact_two_sided(ranks: &[f64], t: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0.0 {
                counts[s + r] += c;
            }
        }
        reach += r;
    }
    let total = 2f64.powi(ranks.len() as i32);
    let t2 = (2.0 * t).round() as usize;
    let tail: f64 = counts[..=t2.min(max)].iter().sum();
    (2.0 * tail / total).min(1.0)
}

/// Normal approximation with tie-aware variance and continuity correction.
fn normal_two_sided(ranks: &[f64], w_plus: f64) -> f64 {
    let mean = ranks.iter().sum::<f64>() / 2.0;
    let var = ranks.iter().map(|r| r * r).sum::<f64>() / 4.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let norm = Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * norm.sf(z)).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force enumeration over all 2^n sign assignments.
    fn enumerate_p(ranks: &[f64], t: f64) -> f64 {
        let n = ranks.len();
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if s <= t + 1e-9 {
                hits += 1;
            }
        }
        (2.0 * hits as f64 / (1u64 << n) as f64).min(1.0)
    }

    #[test]
    fn all_positive_n10() {
        let a: Vec<f64> = (1..=10).map(|i| i as f64 + 0.5).collect();
        let b = vec![0.0; 10];
        let out = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(out.statistic, 0.0);
        assert!((out.p_raw - 2.0 / 1024.0).abs() < 1e-15);
        assert_eq!(out.method, "wilcoxon_exact");
    }

    #[test]
    fn identical_inputs_are_degenerate() {
        let a = [1.0, 2.0, 3.0];
        assert!(matches!(
            wilcoxon_signed_rank(&a, &a),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn exact_matches_enumeration_with_ties() {
        let d = [1.0, -2.0, 2.0, 3.0, -3.0, 3.0, 4.5, 0.5, -0.5, 6.0, 7.0];
        let zeros = vec![0.0; d.len()];
        let out = wilcoxon_signed_rank(&d, &zeros).unwrap();
        let mags: Vec<f64> = d.iter().map(|v: &f64| v.abs()).collect();
        let ranks = average_ranks(&mags);
        assert!((out.p_raw - enumerate_p(&ranks, out.statistic)).abs() < 1e-12);
    }

    #[test]
    fn matches_reference_value() {
        // scipy.stats.wilcoxon(a, b) (exact, no ties)
        let a = [0.88, 0.91, 0.79, 0.85, 0.93, 0.70, 0.82, 0.87];
        let b = [0.84, 0.80, 0.81, 0.775, 0.865, 0.6825, 0.7455, 0.8912];
        let out = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(out.statistic, SCIPY_T);
        assert!((out.p_raw - SCIPY_P).abs() < 1e-12, "{}", out.p_raw);
    }

    const SCIPY_T: f64 = 5.0;
    const SCIPY_P: f64 = 0.078_125;

    #[test]
    fn swapping_arguments_keeps_p() {
        let a = [3.1, 2.0, 5.5, 4.0, 1.0, 7.2, 6.6];
        let b = [2.0, 2.5, 4.0, 4.5, 0.1, 5.0, 6.0];
        let p1 = wilcoxon_signed_rank(&a, &b).unwrap().p_raw;
        let p2 = wilcoxon_signed_rank(&b, &a).unwrap().p_raw;
        assert_eq!(p1, p2);
    }

    #[test]
    fn pratt_keeps_zero_ranks_out_of_the_sum() {
        let a = [0.0, 1.0, 2.0, -3.0, 4.0];
        let b = [0.0; 5];
        let w = wilcoxon_signed_rank_with(&a, &b, ZeroMethod::Wilcox, PMethod::Exact).unwrap();
        let p = wilcoxon_signed_rank_with(&a, &b, ZeroMethod::Pratt, PMethod::Exact).unwrap();
        assert_eq!(w.n, 4);
        assert_eq!(p.n, 4);
        // Wilcox: ranks 1,2,3,4 -> W- = 3 ; Pratt: ranks 2,3,4,5 -> W- = 4
        assert_eq!(w.statistic, 3.0);
        assert_eq!(p.statistic, 4.0);
    }
}
