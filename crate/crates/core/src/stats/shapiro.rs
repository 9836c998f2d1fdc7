//! Shapiro–Wilk normality test using Royston's polynomial approximations
//! for the coefficients and the null distribution of W.

use statrs::distribution::{ContinuousCDF, Normal};

use super::TestOutcome;
use crate::error::{Error, Result};

const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const G: [f64; 2] = [-2.273, 0.459];

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Coefficients `a_1..a_{n/2}` (positive, for the lower half of the order statistics).
fn coefficients(n: usize) -> Vec<f64> {
    let nn2 = n / 2;
    if n == 3 {
        return vec![std::f64::consts::FRAC_1_SQRT_2];
    }
    let norm = std_normal();
    let an25 = n as f64 + 0.25;
    let mut m: Vec<f64> = (1..=nn2)
        .map(|i| norm.inverse_cdf((i as f64 - 0.375) / an25))
        .collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let rsn = 1.0 / (n as f64).sqrt();
    let a1 = poly(&C1, rsn) - m[0] / ssumm2;
    let (first, fac) = if n > 5 {
        let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
        let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
            / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
            .sqrt();
        m[1] = a2;
        (2, fac)
    } else {
        let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
        (1, fac)
    };
    for v in m.iter_mut().skip(first) {
        *v = -*v / fac;
    }
    m[0] = a1;
    m
}

fn p_value(w: f64, n: usize) -> f64 {
    if n == 3 {
        let pi6 = 6.0 / std::f64::consts::PI;
        let stqr = std::f64::consts::PI / 3.0;
        return (pi6 * (w.sqrt().asin() - stqr)).clamp(0.0, 1.0);
    }
    let w1 = 1.0 - w;
    if w1 <= 0.0 {
        return 1.0;
    }
    let mut y = w1.ln();
    let an = n as f64;
    let (m, s) = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            return 1e-99;
        }
        y = -(gamma - y).ln();
        (poly(&C3, an), poly(&C4, an).exp())
    } else {
        let xx = an.ln();
        (poly(&C5, xx), poly(&C6, xx).exp())
    };
    std_normal().sf((y - m) / s).clamp(0.0, 1.0)
}

/// Shapiro–Wilk W and p-value for `3 <= n <= 5000` observations.
pub fn shapiro_wilk(x: &[f64]) -> Result<TestOutcome> {
    let n = x.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::Argument(format!(
            "shapiro_wilk requires 3 <= n <= 5000, got {n}"
        )));
    }
    let mut xs = x.to_vec();
    xs.sort_by(f64::total_cmp);
    let range = xs[n - 1] - xs[0];
    if !(range > 0.0) {
        return Err(Error::DegenerateData(
            "shapiro_wilk: all observations are identical".into(),
        ));
    }
    let a = coefficients(n);
    let mean = xs.iter().sum::<f64>() / n as f64;
    let ssq: f64 = xs.iter().map(|v| (v - mean) * (v - mean)).sum();
    let num: f64 = a
        .iter()
        .enumerate()
        .map(|(i, ai)| ai * (xs[n - 1 - i] - xs[i]))
        .sum();
    let w = (num * num / ssq).min(1.0);
    let p = p_value(w, n);
    Ok(TestOutcome {
        statistic: w,
        p_raw: p,
        p_adjusted: p,
        n,
        method: "shapiro_wilk".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from scipy.stats.shapiro.
    #[test]
    fn matches_reference_values() {
        let x = [
            2.1, 3.4, 1.9, 5.6, 4.4, 3.3, 2.8, 3.9, 4.1, 3.0, 2.5, 6.2, 3.7, 2.2, 4.8,
        ];
        let out = shapiro_wilk(&x).unwrap();
        assert!((out.statistic - SCIPY_W15).abs() < 1e-6, "W = {}", out.statistic);
        assert!((out.p_raw - SCIPY_P15).abs() < 1e-5, "p = {}", out.p_raw);

        let y = [1.0, 2.0, 4.0, 8.0, 16.0];
        let out = shapiro_wilk(&y).unwrap();
        assert!((out.statistic - SCIPY_W5).abs() < 1e-6, "W = {}", out.statistic);
        assert!((out.p_raw - SCIPY_P5).abs() < 1e-5, "p = {}", out.p_raw);
    }

    const SCIPY_W15: f64 = 0.955_391_869_3;
    const SCIPY_P15: f64 = 0.612_945_702_6;
    const SCIPY_W5: f64 = 0.876_108_811_8;
    const SCIPY_P5: f64 = 0.292_048_447_3;

    #[test]
    fn rejects_bad_sizes_and_constants() {
        assert!(matches!(shapiro_wilk(&[1.0, 2.0]), Err(Error::Argument(_))));
        assert!(matches!(
            shapiro_wilk(&[2.0; 10]),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn n3_is_exact() {
        // Equally spaced triple is maximally "normal" at n = 3.
        let out = shapiro_wilk(&[1.0, 2.0, 3.0]).unwrap();
        assert!((out.statistic - 1.0).abs() < 1e-12);
        assert!((out.p_raw - 1.0).abs() < 1e-9);
    }
}
