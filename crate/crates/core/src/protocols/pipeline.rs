//! The per-session pipeline shared by every protocol: channel selection, band
//! isolation, split, normalization, windows, training and scoring.

use std::ops::Range;
use std::time::Instant;

use super::{EvalResult, ExperimentPlan, Strategy};
use crate::autodiff::Tensor;
use crate::decoders::{featurize, Decoder, DecoderSpec, Family};
use crate::dsp::band_isolate_segments;
use crate::error::{Error, Result};
use crate::session::split::split_ranges;
use crate::session::{windows_bounded, Matrix, Normalizer, SegmentRanges, Session, SplitSpec, TargetBound, WindowView, WINDOW_LEN};
use crate::stats::{pearson_r, r_squared};
use crate::trainer::{train, Dataset, TrainConfig, TrainReport};

/// Fixed-size set of sample indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    bits: Vec<u64>,
    n: usize,
}

impl SampleSet {
    pub fn new(n: usize) -> Self {
        Self {
            bits: vec![0; n.div_ceil(64)],
            n,
        }
    }

    pub fn insert_range(&mut self, r: Range<usize>) {
        for i in r.start..r.end.min(self.n) {
            self.bits[i / 64] |= 1 << (i % 64);
        }
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.n && self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn intersection_count(&self, other: &SampleSet) -> usize {
        self.bits.iter().zip(&other.bits).map(|(a, b)| (a & b).count_ones() as usize).sum()
    }
}

/// Which samples of one session each stage touched.
#[derive(Debug, Clone, PartialEq)]
pub struct DataAudit {
    pub session_id: String,
    pub n_samples: usize,
    /// The held-out test segment.
    pub test: SampleSet,
    /// Stage name and the samples it read (inputs and targets).
    pub used: Vec<(String, SampleSet)>,
}

impl DataAudit {
    pub(crate) fn new(session_id: &str, n: usize, test: Range<usize>) -> Self {
        let mut t = SampleSet::new(n);
        t.insert_range(test);
        Self {
            session_id: session_id.to_string(),
            n_samples: n,
            test: t,
            used: Vec::new(),
        }
    }

    pub(crate) fn record_range(&mut self, stage: &str, r: Range<usize>) {
        let mut s = SampleSet::new(self.n_samples);
        s.insert_range(r);
        self.used.push((stage.to_string(), s));
    }

    pub(crate) fn record_windows(&mut self, stage: &str, wins: &[WindowView]) {
        let mut s = SampleSet::new(self.n_samples);
        for w in wins {
            s.insert_range(w.start_index..w.start_index + WINDOW_LEN);
            s.insert_range(w.target_index..w.target_index + 1);
        }
        self.used.push((stage.to_string(), s));
    }

    /// Fails if any stage read a test-segment sample.
    pub fn check(&self) -> Result<()> {
        for (stage, s) in &self.used {
            let k = s.intersection_count(&self.test);
            if k > 0 {
                return Err(Error::Integrity(format!(
                    "session {}: {stage} touched {k} test samples",
                    self.session_id
                )));
            }
        }
        Ok(())
    }
}

/// Train (or calibration), validation and test ranges for a strategy.
/// Every strategy tests on the final 10%; `single_10` and the target side of
/// transfers use the first 10% to fit and the next 10% to validate.
pub fn strategy_segments(strategy: Strategy, t: usize) -> Result<SegmentRanges> {
    let base = split_ranges(t, &SplitSpec::default())?;
    let segs = if strategy == Strategy::Single80 {
        base
    } else {
        let head = split_ranges(t, &SplitSpec::new(0.1, 0.1, 0.8)?)?;
        SegmentRanges {
            train: head.train,
            val: head.val,
            test: base.test,
        }
    };
    if segs.iter().any(|r| r.len() < WINDOW_LEN) {
        return Err(Error::Split(format!("session of {t} samples is too short for {strategy}")));
    }
    Ok(segs)
}

/// Ranges filtered independently during band isolation: the three segments
/// plus any unused gap between them.
fn filter_partition(segs: &SegmentRanges) -> Vec<Range<usize>> {
    let mut out = vec![segs.train.clone(), segs.val.clone()];
    if segs.val.end < segs.test.start {
        out.push(segs.val.end..segs.test.start);
    }
    out.push(segs.test.clone());
    out
}

/// Windows assigned to `seg`: the last window sample and the (shifted) target
/// both lie in `seg`. The window itself may reach back into earlier samples.
pub fn segment_windows(s: &Session, seg: Range<usize>, offset_ms: i64) -> Result<Vec<WindowView>> {
    let lo = seg.start.saturating_sub(WINDOW_LEN - 1);
    let mut w = windows_bounded(s, lo..seg.end, offset_ms, TargetBound::Session)?;
    w.retain(|v| seg.contains(&v.end_index()) && seg.contains(&v.target_index));
    Ok(w)
}

/// Channel subset and band isolation for one plan.
pub(crate) fn prepare(s: &Session, plan: &ExperimentPlan, segs: &SegmentRanges) -> Result<Option<Session>> {
    let idx = plan.regions.channels(s);
    if idx.is_empty() {
        return Ok(None);
    }
    let sel = if idx.len() == s.n_channels() {
        s.clone()
    } else {
        s.select_channels(&idx)?
    };
    Ok(Some(band_isolate_segments(&sel, plan.band, &filter_partition(segs))?))
}

/// Rows the model reads: the channels, or the speed trace for `speed_rnn`.
pub(crate) fn input_matrix(s: &Session, family: Family) -> Matrix {
    if family == Family::SpeedRnn {
        Matrix {
            rows: 1,
            cols: s.n_samples(),
            data: s.speed().to_vec(),
        }
    } else {
        s.eeg().clone()
    }
}

pub(crate) fn dataset(src: &Matrix, wins: &[WindowView], spec: &DecoderSpec) -> Result<Dataset> {
    let x: Tensor = featurize(src, wins, spec)?;
    Dataset::new(x, wins.iter().map(|w| w.target).collect())
}

pub(crate) fn job_spec(plan: &ExperimentPlan, s: &Session, seed: u64) -> DecoderSpec {
    let mut spec = plan.spec.clone();
    spec.input_channels = if spec.family == Family::SpeedRnn { 1 } else { s.n_channels() };
    spec.seed = seed;
    spec
}

pub(crate) fn job_train_config(plan: &ExperimentPlan, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..plan.train.clone()
    }
}

/// `(r, R²)` on held-out targets. A constant prediction has no defined
/// correlation and scores r = 0.
pub fn evaluate(pred: &[f64], actual: &[f64]) -> Result<(f64, f64)> {
    let r = match pearson_r(pred, actual) {
        Ok(r) => r,
        Err(Error::UndefinedCorrelation(_)) => {
            let c = actual.first().copied().unwrap_or(0.0);
            if actual.iter().all(|v| *v == c) {
                return Err(Error::DegenerateData("test speed is constant".into()));
            }
            0.0
        }
        Err(e) => return Err(e),
    };
    Ok((r, r_squared(pred, actual)?))
}

/// Test-segment predictions of a trained decoder.
#[derive(Debug, Clone)]
pub struct Scored {
    pub result: EvalResult,
    pub predictions: Vec<f64>,
    pub targets: Vec<f64>,
}

/// Scores an already trained decoder and normalizer on the final 10% of `s`,
/// exactly as [`run_single_session`] does after training.
pub fn score_session(s: &Session, plan: &ExperimentPlan, decoder: &Decoder, normalizer: &Normalizer) -> Result<Scored> {
    if !plan.strategy.is_single() {
        return Err(Error::Plan(format!("{} is not a single-session strategy", plan.strategy)));
    }
    let segs = strategy_segments(plan.strategy, s.n_samples())?;
    let prepared = prepare(s, plan, &segs)?.ok_or_else(|| {
        Error::Plan(format!("session {} has no channels in {}", s.id(), plan.regions))
    })?;
    let w_te = segment_windows(&prepared, segs.test.clone(), plan.offset_ms)?;
    if w_te.is_empty() {
        return Err(Error::Split(format!("session {}: offset {} ms leaves no test window", s.id(), plan.offset_ms)));
    }
    score_prepared(s, &prepared, plan, decoder, normalizer, &w_te)
}

fn score_prepared(
    s: &Session,
    prepared: &Session,
    plan: &ExperimentPlan,
    decoder: &Decoder,
    normalizer: &Normalizer,
    w_te: &[WindowView],
) -> Result<Scored> {
    let spec = &decoder.spec;
    let want = if spec.family == Family::SpeedRnn { 1 } else { prepared.n_channels() };
    if spec.input_channels != want || normalizer.mean.len() != want {
        return Err(Error::SpecMismatch(format!(
            "session {} gives {want} input rows; decoder expects {} and normalizer {}",
            s.id(),
            spec.input_channels,
            normalizer.mean.len()
        )));
    }
    let src = normalizer.apply(&input_matrix(prepared, spec.family))?;
    let te = dataset(&src, w_te, spec)?;
    let predictions = decoder.predict(&te.x)?;
    let (r, r2) = evaluate(&predictions, &te.y)?;
    let result = EvalResult {
        session_id: s.id().to_string(),
        rat_id: s.rat_id().to_string(),
        strategy: plan.strategy,
        region_set: plan.regions.label(),
        band: plan.band,
        offset_ms: plan.offset_ms,
        model: decoder.family().to_string(),
        r,
        r2,
        n_test_windows: te.len(),
        seed: plan.job_seed(s.id()),
        wall_time_s: None,
    };
    Ok(Scored {
        result,
        predictions,
        targets: te.y,
    })
}

/// Everything a single-session job produces.
#[derive(Debug, Clone)]
pub struct SessionRun {
    pub result: EvalResult,
    pub decoder: Decoder,
    pub normalizer: Normalizer,
    pub report: TrainReport,
    pub audit: DataAudit,
    /// Mean square of the model input over the training segment, before normalization.
    pub input_energy: f64,
    pub predictions: Vec<f64>,
    pub targets: Vec<f64>,
}

/// Trains on the strategy's fitting segment and scores the final 10%.
pub fn run_single_session(s: &Session, plan: &ExperimentPlan) -> Result<SessionRun> {
    if !plan.strategy.is_single() {
        return Err(Error::Plan(format!("{} is not a single-session strategy", plan.strategy)));
    }
    let start = Instant::now();
    let segs = strategy_segments(plan.strategy, s.n_samples())?;
    let prepared = prepare(s, plan, &segs)?.ok_or_else(|| {
        Error::Plan(format!("session {} has no channels in {}", s.id(), plan.regions))
    })?;
    let seed = plan.job_seed(s.id());
    let spec = job_spec(plan, &prepared, seed);
    let raw = input_matrix(&prepared, spec.family);
    let normalizer = Normalizer::fit_matrix(&raw, segs.train.clone())?;
    let src = normalizer.apply(&raw)?;

    let w_tr = segment_windows(&prepared, segs.train.clone(), plan.offset_ms)?;
    let w_va = segment_windows(&prepared, segs.val.clone(), plan.offset_ms)?;
    let w_te = segment_windows(&prepared, segs.test.clone(), plan.offset_ms)?;
    if w_tr.is_empty() || w_va.is_empty() || w_te.is_empty() {
        return Err(Error::Split(format!(
            "session {}: offset {} ms leaves an empty segment",
            s.id(),
            plan.offset_ms
        )));
    }
    let mut audit = DataAudit::new(s.id(), s.n_samples(), segs.test.clone());
    audit.record_range("normalizer", segs.train.clone());
    audit.record_windows("train", &w_tr);
    audit.record_windows("validation", &w_va);
    audit.check()?;

    let (tr, va) = (dataset(&src, &w_tr, &spec)?, dataset(&src, &w_va, &spec)?);
    let (decoder, report) = train(&Decoder::new(spec)?, &tr, &va, &job_train_config(plan, seed))?;
    let input_energy = raw.data.chunks(raw.cols).map(|row| {
        row[segs.train.clone()].iter().map(|v| v * v).sum::<f64>() / segs.train.len() as f64
    }).sum::<f64>() / raw.rows as f64;
    let Scored {
        mut result,
        predictions,
        targets,
    } = score_prepared(s, &prepared, plan, &decoder, &normalizer, &w_te)?;
    result.wall_time_s = plan.record_timing.then(|| start.elapsed().as_secs_f64());
    Ok(SessionRun {
        result,
        decoder,
        normalizer,
        report,
        audit,
        input_energy,
        predictions,
        targets,
    })
}

/// [`run_single_session`] over every session in parallel, in input order.
pub fn run_single_sessions(sessions: &[Session], plan: &ExperimentPlan) -> Result<Vec<SessionRun>> {
    super::par_map(sessions, |s| run_single_session(s, plan))
}
