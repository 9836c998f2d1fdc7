//! Causal and forward–backward (zero-phase) application of SOS filters.

use super::butterworth::SosFilter;
use crate::error::{Error, Result};

/// Steady-state section states for a unit-amplitude constant input.
fn steady_state(filter: &SosFilter) -> Vec<[f64; 2]> {
    let mut level = 1.0;
    let gains = filter.dc_gains();
    filter
        .sections
        .iter()
        .zip(gains)
        .map(|(s, g)| {
            let y = g * level;
            let z1 = y - s.b[0] * level;
            let z2 = s.b[2] * level - s.a[2] * y;
            level = y;
            [z1, z2]
        })
        .collect()
}

/// Direct-form II transposed cascade. `state` is updated in place.
fn run(filter: &SosFilter, x: &mut [f64], state: &mut [[f64; 2]]) {
    for (s, z) in filter.sections.iter().zip(state.iter_mut()) {
        let [b0, b1, b2] = s.b;
        let [_, a1, a2] = s.a;
        let (mut z1, mut z2) = (z[0], z[1]);
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z1;
            z1 = b1 * xin - a1 * y + z2;
            z2 = b2 * xin - a2 * y;
            *v = y;
        }
        *z = [z1, z2];
    }
}

/// Single causal pass from rest.
pub fn sosfilt(filter: &SosFilter, x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    let mut state = vec![[0.0; 2]; filter.sections.len()];
    run(filter, &mut out, &mut state);
    out
}

/// Edge padding used by [`filtfilt`]: three times the filter's pole count.
pub fn pad_len(filter: &SosFilter) -> usize {
    3 * filter.n_poles()
}

/// Zero-phase filtering: odd-reflection padding, forward pass, backward pass,
/// each started from the steady state matching the first sample it sees.
/// The effective magnitude response is `|H|²` with no phase shift.
pub fn filtfilt(filter: &SosFilter, x: &[f64]) -> Result<Vec<f64>> {
    let pad = pad_len(filter);
    let n = x.len();
    if n <= pad {
        return Err(Error::Argument(format!(
            "filtfilt needs more than {pad} samples, got {n}"
        )));
    }
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let zi = steady_state(filter);
    let scaled = |v: f64| zi.iter().map(|z| [z[0] * v, z[1] * v]).collect::<Vec<_>>();

    let mut state = scaled(ext[0]);
    run(filter, &mut ext, &mut state);
    ext.reverse();
    let mut state = scaled(ext[0]);
    run(filter, &mut ext, &mut state);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}
