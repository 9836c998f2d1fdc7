//! `locodec report`: summary tables derived from a results table.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use locodec::dsp::{aggregate_spectra, speed_decile_spectra, spectra_csv, WelchParams};
use locodec::protocols::{parse_results_csv, EvalResult};
use locodec::stats::{bootstrap_median_ci, compare_variants, median, polyfit2, test_table_csv, PairedScores};
use locodec::util::{derive_seed, fnv1a};
use locodec::{Error, Result};

use crate::commands::read_session;
use crate::output::{OutDir, Provenance};

const N_BOOT: usize = 2000;
const ALPHA: f64 = 0.05;

fn variant(r: &EvalResult) -> String {
    format!("{}|{}|{}|{}|{}", r.strategy, r.region_set, r.band.as_str(), r.offset_ms, r.model)
}

/// Variant names in first-appearance order.
fn variants(rows: &[EvalResult], key: impl Fn(&EvalResult) -> String) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in rows {
        let k = key(r);
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

/// Reads `# locodec config_hash=… seed=…` from the table, if present.
fn provenance_of(text: &str, seed: u64) -> Provenance {
    let line = text.lines().next().unwrap_or("");
    let field = |k: &str| {
        line.split_whitespace()
            .find_map(|w| w.strip_prefix(k).map(str::to_string))
    };
    if line.starts_with("# locodec") {
        if let (Some(h), Some(s)) = (field("config_hash="), field("seed=").and_then(|s| s.parse().ok())) {
            return Provenance { config_hash: h, seed: s };
        }
    }
    Provenance {
        config_hash: format!("{:016x}", fnv1a(text.as_bytes())),
        seed,
    }
}

fn scores(rows: &[EvalResult], names: &[String], metric: impl Fn(&EvalResult) -> f64) -> Result<PairedScores> {
    let sessions: Vec<String> = variants(rows, |r| r.session_id.clone());
    let table = sessions
        .iter()
        .map(|s| {
            names
                .iter()
                .map(|v| rows.iter().find(|r| &r.session_id == s && &variant(r) == v).map(&metric))
                .collect()
        })
        .collect();
    PairedScores::from_sparse(names.to_vec(), table)
}

fn medians_csv(rows: &[EvalResult], names: &[String]) -> String {
    let mut s = String::from("strategy,region_set,band,offset_ms,model,n_sessions,median_r,median_r2\n");
    for v in names {
        let cell: Vec<&EvalResult> = rows.iter().filter(|r| &variant(r) == v).collect();
        let r: Vec<f64> = cell.iter().map(|x| x.r).collect();
        let r2: Vec<f64> = cell.iter().map(|x| x.r2).collect();
        let _ = writeln!(
            s,
            "{},{},{},{}",
            v.replace('|', ","),
            cell.len(),
            median(&r).expect("nonempty"),
            median(&r2).expect("nonempty")
        );
    }
    s
}

fn tests_csv(rows: &[EvalResult], names: &[String]) -> Result<String> {
    let mut out = Vec::new();
    if names.len() >= 2 {
        for (metric, f) in [("r", (|x: &EvalResult| x.r) as fn(&EvalResult) -> f64), ("r2", |x| x.r2)] {
            let sc = scores(rows, names, f)?;
            if sc.n_rows() < 3 {
                log::warn!("only {} sessions have every variant; no {metric} tests", sc.n_rows());
                continue;
            }
            out.extend(compare_variants(&sc, metric, ALPHA)?);
        }
    }
    Ok(test_table_csv(&out))
}

/// Offset curves per (strategy, regions, band, model): medians with bootstrap
/// intervals, plus quadratic fits on each side of zero.
fn offset_tables(rows: &[EvalResult], seed: u64) -> Result<Option<(String, String)>> {
    let offsets: BTreeSet<i64> = rows.iter().map(|r| r.offset_ms).collect();
    if offsets.len() < 2 {
        return Ok(None);
    }
    let key = |r: &EvalResult| format!("{}|{}|{}|{}", r.strategy, r.region_set, r.band.as_str(), r.model);
    let mut curve = String::from("strategy,region_set,band,model,offset_ms,n_sessions,median_r,ci_lo,ci_hi\n");
    let mut fits = String::from("strategy,region_set,band,model,direction,c0,c1,c2\n");
    for k in variants(rows, key) {
        let mut pts = Vec::new();
        for &off in &offsets {
            let r: Vec<f64> = rows.iter().filter(|x| key(x) == k && x.offset_ms == off).map(|x| x.r).collect();
            let Some(m) = median(&r) else { continue };
            let (lo, hi) = if r.len() >= 3 {
                let ci = bootstrap_median_ci(&r, N_BOOT, 0.95, derive_seed(seed, &[&k, &off.to_string()]))?;
                (ci.lo.to_string(), ci.hi.to_string())
            } else {
                Default::default()
            };
            let _ = writeln!(curve, "{},{off},{},{m},{lo},{hi}", k.replace('|', ","), r.len());
            pts.push((off as f64, m));
        }
        for (dir, fwd) in [("forward", true), ("backward", false)] {
            let side: Vec<(f64, f64)> = pts.iter().copied().filter(|(x, _)| *x == 0.0 || (*x > 0.0) == fwd).collect();
            if side.len() < 3 {
                continue;
            }
            let (xs, ys): (Vec<f64>, Vec<f64>) = side.into_iter().unzip();
            let c = polyfit2(&xs, &ys)?;
            let _ = writeln!(fits, "{},{dir},{},{},{}", k.replace('|', ","), c[0], c[1], c[2]);
        }
    }
    Ok(Some((curve, fits)))
}

pub fn report(results: &Path, out: &Path, sessions: &[PathBuf], seed: u64) -> Result<()> {
    let text = std::fs::read_to_string(results).map_err(|e| Error::Io {
        path: results.to_path_buf(),
        source: e,
    })?;
    let rows = parse_results_csv(&text)?;
    if rows.is_empty() {
        return Err(Error::Format(format!("{}: no result rows", results.display())));
    }
    let prov = provenance_of(&text, seed);
    let mut dir = OutDir::new(out, prov.clone());
    let names = variants(&rows, variant);
    dir.write_csv("medians.csv", &medians_csv(&rows, &names))?;
    dir.write_csv("tests.csv", &tests_csv(&rows, &names)?)?;
    if let Some((curve, fits)) = offset_tables(&rows, prov.seed)? {
        dir.write_csv("offset_curve.csv", &curve)?;
        dir.write_csv("offset_fits.csv", &fits)?;
    }
    if !sessions.is_empty() {
        let spectra = sessions
            .iter()
            .map(|p| read_session(p).and_then(|s| speed_decile_spectra(&s, WelchParams::default())))
            .collect::<Result<Vec<_>>>()?;
        dir.write_csv("spectra.csv", &spectra_csv(&aggregate_spectra(&spectra)))?;
    }
    dir.finish()
}
