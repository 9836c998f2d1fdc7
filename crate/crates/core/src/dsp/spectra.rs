//! Speed-decile-conditioned spectra in the frequency-normalized `f·P(f)` form.

use std::fmt::Write as _;

use super::welch::{WelchAccumulator, WelchParams};
use crate::error::Result;
use crate::session::Session;
use crate::stats::quantile::quantile_sorted;

pub const N_DECILES: usize = 10;
/// Highest frequency reported (the ingest lowpass corner).
pub const MAX_FREQ_HZ: f64 = 45.0;

/// Upper bounds of the ten deciles (type-7 quantiles at 0.1, 0.2, …, 1.0).
pub fn decile_bounds(speed: &[f64]) -> [f64; N_DECILES] {
    let mut v = speed.to_vec();
    v.sort_by(f64::total_cmp);
    std::array::from_fn(|d| quantile_sorted(&v, (d + 1) as f64 / N_DECILES as f64))
}

/// Lowest decile whose upper bound is at least the sample's speed.
pub fn assign_deciles(speed: &[f64]) -> Vec<usize> {
    let bounds = decile_bounds(speed);
    speed
        .iter()
        .map(|v| bounds.iter().position(|b| b >= v).unwrap_or(N_DECILES - 1))
        .collect()
}

/// Maximal contiguous runs of samples assigned to `decile`.
fn runs(labels: &[usize], decile: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &l) in labels.iter().enumerate() {
        match (l == decile, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(s..i);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(s..labels.len());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionSpectra {
    pub session_id: String,
    /// Frequencies in `[0, 45]` Hz.
    pub frequencies: Vec<f64>,
    /// `f·P(f)` per decile, channel-averaged; `None` when no run reached `nfft`.
    pub deciles: Vec<Option<Vec<f64>>>,
}

/// Per-decile Welch spectra of one session. Runs shorter than `nfft` are dropped.
pub fn speed_decile_spectra(s: &Session, params: WelchParams) -> Result<SessionSpectra> {
    let labels = assign_deciles(s.speed());
    let n_bins = params.nfft / 2 + 1;
    let freqs: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * params.fs / params.nfft as f64)
        .take_while(|f| *f <= MAX_FREQ_HZ + 1e-12)
        .collect();
    let mut deciles = Vec::with_capacity(N_DECILES);
    for d in 0..N_DECILES {
        let rs = runs(&labels, d);
        let mut mean = vec![0.0; freqs.len()];
        let mut ok = true;
        for c in 0..s.n_channels() {
            let mut acc = WelchAccumulator::new(params)?;
            let x = s.channel(c);
            for r in &rs {
                acc.add_run(&x[r.clone()]);
            }
            match acc.finish() {
                Some(p) => mean.iter_mut().zip(&p.power).for_each(|(m, v)| *m += v),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            deciles.push(None);
            continue;
        }
        let nc = s.n_channels() as f64;
        for (m, f) in mean.iter_mut().zip(&freqs) {
            *m = *m / nc * f;
        }
        deciles.push(Some(mean));
    }
    Ok(SessionSpectra {
        session_id: s.id().to_string(),
        frequencies: freqs,
        deciles,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRow {
    pub decile: usize,
    pub freq_hz: f64,
    pub mean: f64,
    pub sem: f64,
    pub n_sessions: usize,
}

/// Mean and standard error across sessions for each decile and bin. Empty
/// deciles are skipped; SEM is 0 when only one session contributes.
pub fn aggregate_spectra(all: &[SessionSpectra]) -> Vec<SpectrumRow> {
    let Some(first) = all.first() else {
        return Vec::new();
    };
    let mut rows = Vec::new();
    for d in 0..N_DECILES {
        let present: Vec<&Vec<f64>> = all.iter().filter_map(|s| s.deciles[d].as_ref()).collect();
        let n = present.len();
        if n == 0 {
            continue;
        }
        for (k, f) in first.frequencies.iter().enumerate() {
            let mean = present.iter().map(|v| v[k]).sum::<f64>() / n as f64;
            let sem = if n > 1 {
                let var = present.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                0.0
            };
            rows.push(SpectrumRow {
                decile: d,
                freq_hz: *f,
                mean,
                sem,
                n_sessions: n,
            });
        }
    }
    rows
}

pub const SPECTRA_HEADER: &str = "decile,freq_hz,f_times_psd_mean,f_times_psd_sem,n_sessions";

pub fn spectra_csv(rows: &[SpectrumRow]) -> String {
    let mut out = String::from(SPECTRA_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.decile, r.freq_hz, r.mean, r.sem, r.n_sessions);
    }
    out
}
