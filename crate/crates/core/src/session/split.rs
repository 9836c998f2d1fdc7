use std::ops::Range;

use super::window::WINDOW_LEN;
use crate::error::{Error, Result};

/// Sequential train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self::new(0.8, 0.1, 0.1).expect("canonical split")
    }
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64, test_frac: f64) -> Result<Self> {
        let fr = [train_frac, val_frac, test_frac];
        if fr.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::Split(format!("fractions must be non-negative: {fr:?}")));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!("fractions must sum to 1: {fr:?}")));
        }
        Ok(Self {
            train_frac,
            val_frac,
            test_frac,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SegmentRanges {
    pub fn iter(&self) -> impl Iterator<Item = &Range<usize>> {
        [&self.train, &self.val, &self.test].into_iter()
    }
}

/// Cumulative floor boundaries; the remainder lands in the test segment.
pub fn split_ranges(t: usize, spec: &SplitSpec) -> Result<SegmentRanges> {
    let b1 = (spec.train_frac * t as f64).floor() as usize;
    let b2 = ((spec.train_frac + spec.val_frac) * t as f64).floor() as usize;
    let b1 = b1.min(t);
    let b2 = b2.clamp(b1, t);
    let r = SegmentRanges {
        train: 0..b1,
        val: b1..b2,
        test: b2..t,
    };
    for (name, seg) in ["train", "val", "test"].iter().zip(r.iter()) {
        if !seg.is_empty() && seg.len() < WINDOW_LEN {
            return Err(Error::Split(format!(
                "{name} segment {seg:?} has {} samples, fewer than one window ({WINDOW_LEN})",
                seg.len()
            )));
        }
    }
    Ok(r)
}

pub fn split_session(s: &super::Session, spec: &SplitSpec) -> Result<SegmentRanges> {
    split_ranges(s.n_samples(), spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_examples() {
        let spec = SplitSpec::default();
        let r = split_ranges(1000, &spec).unwrap();
        assert_eq!((r.train, r.val, r.test), (0..800, 800..900, 900..1000));
        let r = split_ranges(999, &spec).unwrap();
        assert_eq!((r.train, r.val, r.test), (0..799, 799..899, 899..999));
        assert!(matches!(split_ranges(30, &spec), Err(Error::Split(_))));
    }

    #[test]
    fn bad_fractions() {
        assert!(SplitSpec::new(0.8, 0.1, 0.2).is_err());
        assert!(SplitSpec::new(1.1, -0.1, 0.0).is_err());
        let r = split_ranges(100, &SplitSpec::new(1.0, 0.0, 0.0).unwrap()).unwrap();
        assert_eq!(r.train, 0..100);
        assert!(r.val.is_empty() && r.test.is_empty());
    }

    proptest! {
        #[test]
        fn segments_partition(t in 200usize..5000, a in 0.2f64..0.8, b in 0.05f64..0.15) {
            let spec = SplitSpec::new(a, b, 1.0 - a - b).unwrap();
            if let Ok(r) = split_ranges(t, &spec) {
                let mut seen = vec![0u8; t];
                for seg in r.iter() {
                    for i in seg.clone() { seen[i] += 1; }
                }
                prop_assert!(seen.iter().all(|&c| c == 1));
                prop_assert!(r.train.end == r.val.start && r.val.end == r.test.start);
            }
        }
    }
}
