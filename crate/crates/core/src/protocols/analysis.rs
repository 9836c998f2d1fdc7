//! Region, band and temporal-offset attribution.

use super::{par_map, run_single_session, EvalResult, ExperimentPlan, RegionSet, Strategy};
use crate::decoders::Family;
use crate::dsp::{autocorrelation_curve, Band};
use crate::error::{Error, Result};
use crate::session::{Region, Session};
use crate::stats::{bootstrap_median_ci, median, polyfit2, MedianCi};

fn medians(rows: &[EvalResult]) -> (Option<f64>, Option<f64>) {
    let r: Vec<f64> = rows.iter().map(|x| x.r).collect();
    let r2: Vec<f64> = rows.iter().map(|x| x.r2).collect();
    (median(&r), median(&r2))
}

fn single_80(plan: &ExperimentPlan) -> Result<ExperimentPlan> {
    if plan.strategy != Strategy::Single80 {
        return Err(Error::Plan(format!("attribution runs use single_80, plan has {}", plan.strategy)));
    }
    Ok(plan.clone())
}

#[derive(Debug, Clone)]
pub struct RegionCell {
    pub regions: RegionSet,
    pub median_r: Option<f64>,
    pub median_r2: Option<f64>,
    pub results: Vec<EvalResult>,
    /// Sessions without channels in the set.
    pub skipped: Vec<String>,
}

/// Four single regions and six pairs; symmetric 4×4 lookup via [`RegionMatrix::cell`].
#[derive(Debug, Clone)]
pub struct RegionMatrix {
    pub cells: Vec<RegionCell>,
}

impl RegionMatrix {
    pub fn region_sets() -> Vec<RegionSet> {
        let mut out: Vec<RegionSet> = Region::ALL.iter().map(|r| RegionSet::single(*r)).collect();
        for i in 0..4 {
            for j in i + 1..4 {
                out.push(RegionSet::pair(Region::ALL[i], Region::ALL[j]).expect("two regions"));
            }
        }
        out
    }

    pub fn cell(&self, a: Region, b: Region) -> &RegionCell {
        let want = if a == b {
            RegionSet::single(a)
        } else {
            RegionSet::pair(a, b).expect("two regions")
        };
        self.cells.iter().find(|c| c.regions == want).expect("all ten cells are present")
    }

    pub fn results(&self) -> impl Iterator<Item = &EvalResult> {
        self.cells.iter().flat_map(|c| c.results.iter())
    }
}

pub fn run_region_analysis(sessions: &[Session], plan: &ExperimentPlan) -> Result<RegionMatrix> {
    let base = single_80(plan)?;
    let mut cells = Vec::new();
    for regions in RegionMatrix::region_sets() {
        let p = ExperimentPlan {
            regions: regions.clone(),
            ..base.clone()
        };
        let runs = par_map(sessions, |s| {
            if p.regions.channels(s).is_empty() {
                Ok(None)
            } else {
                run_single_session(s, &p).map(|r| Some(r.result))
            }
        })?;
        let mut results = Vec::new();
        let mut skipped = Vec::new();
        for (s, r) in sessions.iter().zip(runs) {
            match r {
                Some(r) => results.push(r),
                None => {
                    log::warn!("session {} has no channels in {}; skipped", s.id(), regions);
                    skipped.push(s.id().to_string());
                }
            }
        }
        let (median_r, median_r2) = medians(&results);
        cells.push(RegionCell {
            regions,
            median_r,
            median_r2,
            results,
            skipped,
        });
    }
    Ok(RegionMatrix { cells })
}

#[derive(Debug, Clone)]
pub struct BandCell {
    pub band: Band,
    pub median_r: Option<f64>,
    pub median_r2: Option<f64>,
    pub results: Vec<EvalResult>,
    /// Per session: mean square of the isolated channels over the training segment.
    pub energies: Vec<f64>,
}

/// Fullband first, then the five isolated bands.
pub fn run_band_analysis(sessions: &[Session], plan: &ExperimentPlan) -> Result<Vec<BandCell>> {
    let base = single_80(plan)?;
    let mut bands = vec![Band::Fullband];
    bands.extend(Band::ISOLATED);
    let mut out = Vec::new();
    for band in bands {
        let p = ExperimentPlan { band, ..base.clone() };
        let runs = par_map(sessions, |s| run_single_session(s, &p))?;
        let energies = runs.iter().map(|r| r.input_energy).collect();
        let results: Vec<EvalResult> = runs.into_iter().map(|r| r.result).collect();
        let (median_r, median_r2) = medians(&results);
        out.push(BandCell {
            band,
            median_r,
            median_r2,
            results,
            energies,
        });
    }
    Ok(out)
}

pub const DEFAULT_OFFSETS_MS: [i64; 9] = [-1000, -500, -200, -100, 0, 100, 200, 500, 1000];

#[derive(Debug, Clone, PartialEq)]
pub struct OffsetSummary {
    pub model: String,
    pub offset_ms: i64,
    pub median_r: f64,
    pub median_r2: f64,
    /// Bootstrapped 95% interval of the median r (needs >= 3 sessions).
    pub ci_r: Option<MedianCi>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutocorrCurve {
    pub session_id: String,
    pub lags_ms: Vec<i64>,
    pub values: Vec<f64>,
}

/// Quadratic fit of median r against offset for one model and direction.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveFit {
    pub model: String,
    /// `forward` (offset >= 0) or `backward` (offset <= 0).
    pub direction: &'static str,
    pub coeffs: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct OffsetAnalysis {
    pub results: Vec<EvalResult>,
    pub summaries: Vec<OffsetSummary>,
    pub autocorr: Vec<AutocorrCurve>,
    /// Median over sessions at every lag.
    pub autocorr_median: Vec<(i64, f64)>,
    pub fits: Vec<CurveFit>,
}

const N_BOOT: usize = 2000;
const AUTOCORR_MAX_MS: i64 = 1000;

/// Decodes speed shifted by each offset with the plan's channel model and with
/// `speed_rnn` on the speed history alone.
pub fn run_offset_analysis(sessions: &[Session], plan: &ExperimentPlan, offsets_ms: &[i64]) -> Result<OffsetAnalysis> {
    let base = single_80(plan)?;
    if base.spec.family == Family::SpeedRnn {
        return Err(Error::Plan("the offset analysis needs a channel model; speed_rnn runs alongside it".into()));
    }
    let mut speed_plan = base.clone();
    speed_plan.spec.family = Family::SpeedRnn;
    speed_plan.spec.input_channels = 1;

    let mut results = Vec::new();
    let mut summaries = Vec::new();
    for p in [&base, &speed_plan] {
        let model = p.spec.family.to_string();
        let mut by_offset: Vec<(i64, Vec<EvalResult>)> = Vec::new();
        for &off in offsets_ms {
            let q = ExperimentPlan {
                offset_ms: off,
                ..(*p).clone()
            };
            let rows: Vec<EvalResult> = par_map(sessions, |s| run_single_session(s, &q).map(|r| r.result))?;
            by_offset.push((off, rows));
        }
        for (off, rows) in &by_offset {
            let (mr, mr2) = medians(rows);
            let rs: Vec<f64> = rows.iter().map(|x| x.r).collect();
            let ci = if rs.len() >= 3 {
                Some(bootstrap_median_ci(&rs, N_BOOT, 0.95, p.job_seed(&format!("ci{off}")))?)
            } else {
                None
            };
            summaries.push(OffsetSummary {
                model: model.clone(),
                offset_ms: *off,
                median_r: mr.unwrap_or(f64::NAN),
                median_r2: mr2.unwrap_or(f64::NAN),
                ci_r: ci,
            });
        }
        results.extend(by_offset.into_iter().flat_map(|(_, rows)| rows));
    }

    let mut fits = Vec::new();
    for model in [base.spec.family.to_string(), Family::SpeedRnn.to_string()] {
        for (direction, keep) in [("forward", true), ("backward", false)] {
            let pts: Vec<(f64, f64)> = summaries
                .iter()
                .filter(|s| s.model == model && (s.offset_ms == 0 || (s.offset_ms > 0) == keep))
                .map(|s| (s.offset_ms as f64, s.median_r))
                .collect();
            if pts.len() >= 3 {
                let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
                fits.push(CurveFit {
                    model: model.clone(),
                    direction,
                    coeffs: polyfit2(&xs, &ys)?,
                });
            }
        }
    }

    let autocorr: Vec<AutocorrCurve> = par_map(sessions, |s| {
        let step_ms = 1000.0 / s.sample_rate_hz();
        let max_lag = (AUTOCORR_MAX_MS as f64 / step_ms).round() as usize;
        let curve = autocorrelation_curve(s.speed(), max_lag)?;
        Ok(AutocorrCurve {
            session_id: s.id().to_string(),
            lags_ms: curve.iter().map(|(k, _)| (*k as f64 * step_ms).round() as i64).collect(),
            values: curve.iter().map(|(_, v)| *v).collect(),
        })
    })?;
    let autocorr_median = match autocorr.first() {
        None => Vec::new(),
        Some(first) => (0..first.lags_ms.len())
            .filter(|&i| autocorr.iter().all(|c| c.lags_ms.get(i) == Some(&first.lags_ms[i])))
            .map(|i| {
                let vals: Vec<f64> = autocorr.iter().map(|c| c.values[i]).collect();
                (first.lags_ms[i], median(&vals).expect("nonempty"))
            })
            .collect(),
    };
    Ok(OffsetAnalysis {
        results,
        summaries,
        autocorr,
        autocorr_median,
        fits,
    })
}
