//! Results table CSV.

use super::{EvalResult, Strategy};
use crate::dsp::Band;
use crate::error::{Error, Result};

pub const RESULTS_HEADER: &str =
    "session_id,rat_id,strategy,region_set,band,offset_ms,model,r,r2,n_test_windows,seed,wall_time_s";

/// Floats use the shortest representation that round-trips.
pub fn results_csv(rows: &[EvalResult]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        let wall = r.wall_time_s.map(|w| format!("{w:.3}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.session_id,
            r.rat_id,
            r.strategy,
            r.region_set,
            r.band.as_str(),
            r.offset_ms,
            r.model,
            r.r,
            r.r2,
            r.n_test_windows,
            r.seed,
            wall
        ));
    }
    out
}

/// Leading `#` lines (run provenance) are skipped.
pub fn parse_results_csv(text: &str) -> Result<Vec<EvalResult>> {
    let mut lines = text.lines().skip_while(|l| l.starts_with('#'));
    match lines.next() {
        Some(h) if h.trim() == RESULTS_HEADER => {}
        other => {
            return Err(Error::Format(format!(
                "results table header mismatch: expected {RESULTS_HEADER:?}, got {other:?}"
            )))
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(Error::Format(format!("results line {lineno}: expected 12 fields, got {}", f.len())));
        }
        let bad = |what: &str| Error::Format(format!("results line {lineno}: bad {what}"));
        out.push(EvalResult {
            session_id: f[0].to_string(),
            rat_id: f[1].to_string(),
            strategy: f[2].parse::<Strategy>().map_err(|_| bad("strategy"))?,
            region_set: f[3].to_string(),
            band: f[4].parse::<Band>().map_err(|_| bad("band"))?,
            offset_ms: f[5].parse().map_err(|_| bad("offset_ms"))?,
            model: f[6].to_string(),
            r: f[7].parse().map_err(|_| bad("r"))?,
            r2: f[8].parse().map_err(|_| bad("r2"))?,
            n_test_windows: f[9].parse().map_err(|_| bad("n_test_windows"))?,
            seed: f[10].parse().map_err(|_| bad("seed"))?,
            wall_time_s: if f[11].is_empty() {
                None
            } else {
                Some(f[11].parse().map_err(|_| bad("wall_time_s"))?)
            },
        });
    }
    Ok(out)
}
