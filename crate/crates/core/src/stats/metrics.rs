//! Decoding metrics: Pearson correlation and coefficient of determination.

use crate::error::{Error, Result};

fn check_pair(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "{what}: length mismatch ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Argument(format!("{what}: need at least 2 samples")));
    }
    Ok(())
}

/// Pearson correlation coefficient. Constant inputs have no defined correlation.
pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, "pearson_r")?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "one of the inputs is constant".into(),
        ));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// `1 - SS_res / SS_tot`, with `SS_tot` taken about the mean of `actual`.
///
/// Negative values mean the prediction is worse than the constant-mean predictor.
pub fn r_squared(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_pair(pred, actual, "r_squared")?;
    let n = actual.len() as f64;
    let mean = actual.iter().sum::<f64>() / n;
    let ss_tot: f64 = actual.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::DegenerateData(
            "r_squared: actual values are constant".into(),
        ));
    }
    let ss_res: f64 = pred
        .iter()
        .zip(actual)
        .map(|(p, y)| (y - p) * (y - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Mean squared error; empty input yields zero.
pub fn mse(pred: &[f64], actual: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter()
        .zip(actual)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / pred.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn self_and_negated() {
        let x = [1.0, 3.0, 2.0, 5.0, 4.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_r(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson_r(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn mean_predictor_scores_zero() {
        let actual = [0.5, 2.0, 1.0, 3.5, 0.0];
        let m = actual.iter().sum::<f64>() / actual.len() as f64;
        let pred = vec![m; actual.len()];
        assert_eq!(r_squared(&pred, &actual).unwrap(), 0.0);
    }

    #[test]
    fn offset_prediction_decouples_metrics() {
        let actual = [0.5, 2.0, 1.0, 3.5, 0.0];
        let pred: Vec<f64> = actual.iter().map(|v| v + 100.0).collect();
        assert!((pearson_r(&pred, &actual).unwrap() - 1.0).abs() < 1e-12);
        assert!(r_squared(&pred, &actual).unwrap() < 0.0);
    }

    #[test]
    fn constant_input_is_an_error() {
        assert!(matches!(
            pearson_r(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(pearson_r(&[1.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn pearson_affine_invariant(
            xs in proptest::collection::vec(-10.0f64..10.0, 5..40),
            scale in 0.1f64..50.0,
            shift in -100.0f64..100.0,
        ) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, v)| v.sin() + i as f64 * 0.1).collect();
            let spread = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - xs.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-3);
            let r0 = pearson_r(&xs, &ys).unwrap();
            let xt: Vec<f64> = xs.iter().map(|v| v * scale + shift).collect();
            let r1 = pearson_r(&xt, &ys).unwrap();
            prop_assert!((r0 - r1).abs() < 1e-12);
        }
    }
}
