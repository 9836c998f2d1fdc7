use std::ops::Range;

use super::{Matrix, Session};
use crate::error::{Error, Result};

/// Samples per window (200 ms at 100 Hz).
pub const WINDOW_LEN: usize = 20;

/// A causal 20-sample slice and its (possibly shifted) speed target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowView {
    pub start_index: usize,
    pub offset_samples: i64,
    pub target_index: usize,
    pub target: f64,
}

impl WindowView {
    /// Index of the most recent sample in the window.
    pub fn end_index(&self) -> usize {
        self.start_index + WINDOW_LEN - 1
    }

    /// Writes the window time-major (row t = column `start_index + t`) into `out`,
    /// which must hold `WINDOW_LEN * eeg.rows` values.
    pub fn fill(&self, eeg: &Matrix, out: &mut [f64]) {
        let c = eeg.rows;
        debug_assert_eq!(out.len(), WINDOW_LEN * c);
        for ch in 0..c {
            let src = &eeg.row(ch)[self.start_index..self.start_index + WINDOW_LEN];
            for (t, v) in src.iter().enumerate() {
                out[t * c + ch] = *v;
            }
        }
    }
}

/// Where a shifted target index may fall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetBound {
    /// Anywhere in the session.
    #[default]
    Session,
    /// Inside the window's own segment, so no label crosses a split boundary.
    Segment,
}

/// Converts a millisecond offset into samples at `rate_hz`.
pub fn offset_samples(offset_ms: i64, rate_hz: f64) -> Result<i64> {
    let exact = offset_ms as f64 * rate_hz / 1000.0;
    if (exact - exact.round()).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "offset {offset_ms} ms is not a whole number of samples at {rate_hz} Hz"
        )));
    }
    Ok(exact.round() as i64)
}

/// Every window inside `range` whose shifted target lies in `[0, T)`.
pub fn windows(s: &Session, range: Range<usize>, offset_ms: i64) -> Result<Vec<WindowView>> {
    windows_bounded(s, range, offset_ms, TargetBound::Session)
}

pub fn windows_bounded(
    s: &Session,
    range: Range<usize>,
    offset_ms: i64,
    bound: TargetBound,
) -> Result<Vec<WindowView>> {
    let off = offset_samples(offset_ms, s.sample_rate_hz())?;
    let t = s.n_samples();
    if range.end > t {
        return Err(Error::Argument(format!("window range {range:?} exceeds {t} samples")));
    }
    let (lo, hi) = match bound {
        TargetBound::Session => (0i64, t as i64),
        TargetBound::Segment => (range.start as i64, range.end as i64),
    };
    let speed = s.speed();
    let mut out = Vec::new();
    if range.len() < WINDOW_LEN {
        return Ok(out);
    }
    for start in range.start..=range.end - WINDOW_LEN {
        let ti = (start + WINDOW_LEN - 1) as i64 + off;
        if ti < lo || ti >= hi {
            continue;
        }
        out.push(WindowView {
            start_index: start,
            offset_samples: off,
            target_index: ti as usize,
            target: speed[ti as usize],
        });
    }
    Ok(out)
}

/// Closed-form window count for a range of `len` samples starting at `start`.
pub fn window_count(start: usize, len: usize, t: usize, off: i64, bound: TargetBound) -> usize {
    if len < WINDOW_LEN {
        return 0;
    }
    let (lo, hi) = match bound {
        TargetBound::Session => (0i64, t as i64),
        TargetBound::Segment => (start as i64, (start + len) as i64),
    };
    let first = (start + WINDOW_LEN - 1) as i64 + off;
    let last = first + (len - WINDOW_LEN) as i64;
    let a = first.max(lo);
    let b = last.min(hi - 1);
    if b < a {
        0
    } else {
        (b - a + 1) as usize
    }
}
