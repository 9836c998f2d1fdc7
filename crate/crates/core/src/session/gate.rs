use super::Session;
use crate::error::{Error, Result};
use crate::stats::quantile::{quantile, quantile_sorted};

/// How the IQR exclusion threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateThreshold {
    /// Quantile (in [0, 1]) of the IQR distribution over the input.
    Percentile(f64),
    /// Fixed value.
    Fixed(f64),
}

impl Default for GateThreshold {
    fn default() -> Self {
        GateThreshold::Percentile(0.10)
    }
}

/// Q3 − Q1 of a speed trace (type-7 quantiles).
pub fn session_iqr(speed: &[f64]) -> Result<f64> {
    if speed.len() < 4 {
        return Err(Error::Argument(format!(
            "IQR needs at least 4 samples, got {}",
            speed.len()
        )));
    }
    let mut v = speed.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25))
}

/// Resolves the threshold and partitions indices into (included, excluded).
/// A value `≤ threshold` is excluded.
pub fn gate_iqrs(iqrs: &[f64], threshold: GateThreshold) -> Result<(Vec<usize>, Vec<usize>, f64)> {
    if iqrs.is_empty() {
        return Err(Error::Argument("inclusion gate needs at least one session".into()));
    }
    let thr = match threshold {
        GateThreshold::Fixed(t) => t,
        GateThreshold::Percentile(q) => {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Argument(format!("percentile {q} outside [0, 1]")));
            }
            quantile(iqrs, q).expect("nonempty")
        }
    };
    let (inc, exc): (Vec<usize>, Vec<usize>) = (0..iqrs.len()).partition(|&i| iqrs[i] > thr);
    Ok((inc, exc, thr))
}

#[derive(Debug, Clone)]
pub struct GateOutcome {
    pub included: Vec<Session>,
    pub excluded: Vec<Session>,
    /// Sessions dropped beforehand because a channel was flagged non-functional.
    pub flagged: Vec<Session>,
    pub threshold: f64,
    /// (session id, IQR) for every gated session, in input order.
    pub iqrs: Vec<(String, f64)>,
}

/// Applies the speed-IQR inclusion gate. Sessions with a non-functional channel
/// flag are set aside first and do not enter the percentile.
pub fn apply_inclusion_gate(sessions: Vec<Session>, threshold: GateThreshold) -> Result<GateOutcome> {
    if sessions.is_empty() {
        return Err(Error::Argument("inclusion gate needs at least one session".into()));
    }
    let (ok, flagged): (Vec<Session>, Vec<Session>) =
        sessions.into_iter().partition(Session::channels_functional);
    if ok.is_empty() {
        return Err(Error::Argument("every session failed the channel-functionality flag".into()));
    }
    let iqrs: Vec<f64> = ok.iter().map(|s| session_iqr(s.speed())).collect::<Result<_>>()?;
    let (inc, _, thr) = gate_iqrs(&iqrs, threshold)?;
    let ids: Vec<(String, f64)> = ok.iter().zip(&iqrs).map(|(s, q)| (s.id().to_string(), *q)).collect();
    let mut included = Vec::with_capacity(inc.len());
    let mut excluded = Vec::new();
    let mut keep = vec![false; ok.len()];
    inc.iter().for_each(|&i| keep[i] = true);
    for (s, k) in ok.into_iter().zip(keep) {
        if k {
            included.push(s)
        } else {
            excluded.push(s)
        }
    }
    Ok(GateOutcome {
        included,
        excluded,
        flagged,
        threshold: thr,
        iqrs: ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::test_support::labels;
    use crate::session::Matrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn iqr_examples() {
        assert_eq!(session_iqr(&[3.0; 50]).unwrap(), 0.0);
        let ramp: Vec<f64> = (0..100).map(f64::from).collect();
        assert!((session_iqr(&ramp).unwrap() - 49.5).abs() < 1e-12);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        assert!((session_iqr(&u).unwrap() - 0.5).abs() < 0.01);
        assert!(session_iqr(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn brute_force_quantile_oracle() {
        // Type-7 position h = (n-1)q, interpolate between floor and ceil.
        let xs = [5.0, 1.0, 9.0, 3.0, 7.0, 2.0];
        let mut s = xs.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = (s.len() - 1) as f64 * p;
            let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
            s[lo] + (h - lo as f64) * (s[hi] - s[lo])
        };
        assert!((session_iqr(&xs).unwrap() - (q(0.75) - q(0.25))).abs() < 1e-12);
    }

    #[test]
    fn fixed_threshold_is_inclusive() {
        let (inc, exc, thr) = gate_iqrs(&[0.3, 0.46, 0.5], GateThreshold::Fixed(0.46)).unwrap();
        assert_eq!((inc, exc, thr), (vec![2], vec![0, 1], 0.46));
        assert!(gate_iqrs(&[], GateThreshold::default()).is_err());
    }

    fn session_with_speed(id: &str, speed: Vec<f64>) -> Session {
        let t = speed.len();
        Session::new(id, "r", 100.0, Matrix::zeros(1, t), speed, labels(1)).unwrap()
    }

    #[test]
    fn constant_session_is_excluded() {
        let mut v = vec![session_with_speed("flat", vec![1.0; 40])];
        for i in 0..9 {
            // IQR exactly 1.0
            let sp: Vec<f64> = (0..40).map(|t| if t < 20 { 0.0 } else { 1.0 }).collect();
            v.push(session_with_speed(&format!("s{i}"), sp));
        }
        let out = apply_inclusion_gate(v, GateThreshold::default()).unwrap();
        assert_eq!(out.excluded.len(), 1);
        assert_eq!(out.excluded[0].id(), "flat");
        assert_eq!(out.included.len(), 9);
    }

    #[test]
    fn flagged_sessions_are_set_aside() {
        let mut bad = session_with_speed("bad", (0..40).map(f64::from).collect());
        bad.metadata.insert("channels_functional".into(), "false".into());
        let good = session_with_speed("good", (0..40).map(f64::from).collect());
        let out = apply_inclusion_gate(vec![bad, good], GateThreshold::Fixed(0.0)).unwrap();
        assert_eq!(out.flagged.len(), 1);
        assert_eq!(out.included.len(), 1);
    }

    proptest! {
        #[test]
        fn gate_is_monotone(iqrs in prop::collection::vec(0.0f64..3.0, 1..40), a in 0.0f64..3.0, b in 0.0f64..3.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let (inc_hi, exc_hi, _) = gate_iqrs(&iqrs, GateThreshold::Fixed(hi)).unwrap();
            let (inc_lo, _, _) = gate_iqrs(&iqrs, GateThreshold::Fixed(lo)).unwrap();
            prop_assert!(inc_hi.iter().all(|i| inc_lo.contains(i)));
            prop_assert_eq!(inc_hi.len() + exc_hi.len(), iqrs.len());
        }
    }
}
