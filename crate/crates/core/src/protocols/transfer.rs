//! Cross-session and cross-subject transfer, zero-shot or with a fine-tuned head.

use std::collections::BTreeMap;
use std::time::Instant;

use super::pipeline::{dataset, input_matrix, job_train_config, prepare, run_single_session};
use super::{evaluate, par_map, segment_windows, strategy_segments, DataAudit, EvalResult, ExperimentPlan, SessionRun, Strategy, ZeroShotNormalizer};
use crate::error::{Error, Result};
use crate::session::{Normalizer, Session};
use crate::stats::median;
use crate::trainer::fine_tune;
use crate::util::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct PairEval {
    pub source: String,
    pub target: String,
    pub r: f64,
    pub r2: f64,
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    /// One row per target session: medians over every source model.
    pub results: Vec<EvalResult>,
    pub pairs: Vec<PairEval>,
    pub audits: Vec<DataAudit>,
}

impl TransferOutcome {
    pub fn n_evaluations(&self) -> usize {
        self.pairs.len()
    }
}

/// `Σ N_i (N_i − 1)` for cross-session, `Σ N_i (N − N_i)` for cross-subject.
pub fn expected_evaluations(strategy: Strategy, sessions_per_rat: &[usize]) -> usize {
    let total: usize = sessions_per_rat.iter().sum();
    sessions_per_rat
        .iter()
        .map(|&n| {
            if strategy.is_cross_subject() {
                n * (total - n)
            } else {
                n * n.saturating_sub(1)
            }
        })
        .sum()
}

fn check_roster(sessions: &[Session], strategy: Strategy) -> Result<()> {
    if strategy.is_single() {
        return Err(Error::Plan(format!("{strategy} is not a transfer strategy")));
    }
    let mut per_rat: BTreeMap<&str, usize> = BTreeMap::new();
    for s in sessions {
        *per_rat.entry(s.rat_id()).or_default() += 1;
    }
    let ok = if strategy.is_cross_subject() {
        per_rat.len() >= 2
    } else {
        per_rat.values().any(|&n| n >= 2)
    };
    if !ok {
        return Err(Error::Plan(format!(
            "{strategy} needs {}; roster has {} rats and {} sessions",
            if strategy.is_cross_subject() { ">= 2 rats" } else { "a rat with >= 2 sessions" },
            per_rat.len(),
            sessions.len()
        )));
    }
    let mut ids: Vec<&str> = sessions.iter().map(|s| s.id()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Plan("session ids must be unique".into()));
    }
    Ok(())
}

/// Source models: the `single_80` pipeline on every session.
pub fn train_sources(sessions: &[Session], plan: &ExperimentPlan) -> Result<Vec<SessionRun>> {
    let base = plan.with_strategy(Strategy::Single80);
    par_map(sessions, |s| run_single_session(s, &base))
}

fn is_pair(strategy: Strategy, src: &Session, tgt: &Session) -> bool {
    src.id() != tgt.id() && ((src.rat_id() == tgt.rat_id()) != strategy.is_cross_subject())
}

struct PairOutcome {
    r: f64,
    r2: f64,
    n_test: usize,
    audit: DataAudit,
}

fn eval_pair(src: &SessionRun, tgt: &Session, plan: &ExperimentPlan, seed: u64) -> Result<PairOutcome> {
    let segs = strategy_segments(plan.strategy, tgt.n_samples())?;
    let prepared = prepare(tgt, plan, &segs)?
        .ok_or_else(|| Error::Plan(format!("session {} has no channels in {}", tgt.id(), plan.regions)))?;
    let family = src.decoder.family();
    let raw = input_matrix(&prepared, family);
    if raw.rows != src.normalizer.n_channels() {
        return Err(Error::SpecMismatch(format!(
            "source {} reads {} channels, target {} has {}",
            src.result.session_id,
            src.normalizer.n_channels(),
            tgt.id(),
            raw.rows
        )));
    }
    let mut audit = DataAudit::new(tgt.id(), tgt.n_samples(), segs.test.clone());
    let refit = plan.strategy.is_finetune() || plan.zero_shot_normalizer == ZeroShotNormalizer::Target;
    let normalizer = if refit {
        audit.record_range("normalizer", segs.train.clone());
        Normalizer::fit_matrix(&raw, segs.train.clone())?
    } else {
        src.normalizer.clone()
    };
    let x = normalizer.apply(&raw)?;
    let spec = &src.decoder.spec;
    let w_te = segment_windows(&prepared, segs.test.clone(), plan.offset_ms)?;
    let decoder = if plan.strategy.is_finetune() {
        let w_cal = segment_windows(&prepared, segs.train.clone(), plan.offset_ms)?;
        let w_va = segment_windows(&prepared, segs.val.clone(), plan.offset_ms)?;
        audit.record_windows("calibration", &w_cal);
        audit.record_windows("validation", &w_va);
        audit.check()?;
        let (cal, va) = (dataset(&x, &w_cal, spec)?, dataset(&x, &w_va, spec)?);
        fine_tune(&src.decoder, spec, &cal, &va, &job_train_config(plan, seed))?.0
    } else {
        audit.check()?;
        src.decoder.clone()
    };
    let te = dataset(&x, &w_te, spec)?;
    let pred = decoder.predict(&te.x)?;
    let (r, r2) = evaluate(&pred, &te.y)?;
    Ok(PairOutcome {
        r,
        r2,
        n_test: te.len(),
        audit,
    })
}

/// Trains sources and evaluates every (source, target) pair of the strategy.
pub fn run_transfer_matrix(sessions: &[Session], plan: &ExperimentPlan) -> Result<TransferOutcome> {
    check_roster(sessions, plan.strategy)?;
    let sources = train_sources(sessions, plan)?;
    run_transfer_with_sources(sessions, &sources, plan)
}

/// Like [`run_transfer_matrix`] with source models already trained
/// (`sources[i]` belongs to `sessions[i]`).
pub fn run_transfer_with_sources(
    sessions: &[Session],
    sources: &[SessionRun],
    plan: &ExperimentPlan,
) -> Result<TransferOutcome> {
    check_roster(sessions, plan.strategy)?;
    if sources.len() != sessions.len()
        || sources.iter().zip(sessions).any(|(r, s)| r.result.session_id != s.id())
    {
        return Err(Error::Plan("source runs do not line up with the session roster".into()));
    }
    let per_target = par_map(sessions, |tgt| {
        let start = Instant::now();
        let seed = plan.job_seed(tgt.id());
        let mut pairs = Vec::new();
        let mut audits = Vec::new();
        let mut n_test = 0;
        for (src_s, src) in sessions.iter().zip(sources) {
            if !is_pair(plan.strategy, src_s, tgt) {
                continue;
            }
            let o = eval_pair(src, tgt, plan, derive_seed(seed, &[src_s.id()]))?;
            n_test = o.n_test;
            pairs.push(PairEval {
                source: src_s.id().to_string(),
                target: tgt.id().to_string(),
                r: o.r,
                r2: o.r2,
            });
            audits.push(o.audit);
        }
        let row = (!pairs.is_empty()).then(|| {
            let rs: Vec<f64> = pairs.iter().map(|p| p.r).collect();
            let r2s: Vec<f64> = pairs.iter().map(|p| p.r2).collect();
            EvalResult {
                session_id: tgt.id().to_string(),
                rat_id: tgt.rat_id().to_string(),
                strategy: plan.strategy,
                region_set: plan.regions.label(),
                band: plan.band,
                offset_ms: plan.offset_ms,
                model: plan.spec.family.to_string(),
                r: median(&rs).expect("nonempty"),
                r2: median(&r2s).expect("nonempty"),
                n_test_windows: n_test,
                seed,
                wall_time_s: plan.record_timing.then(|| start.elapsed().as_secs_f64()),
            }
        });
        Ok((row, pairs, audits))
    })?;
    let mut out = TransferOutcome {
        results: Vec::new(),
        pairs: Vec::new(),
        audits: Vec::new(),
    };
    for (row, pairs, audits) in per_target {
        out.results.extend(row);
        out.pairs.extend(pairs);
        out.audits.extend(audits);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::{DecoderSpec, Family};
    use crate::protocols::synth::{generate_synthetic_fleet, FleetSpec};
    use crate::trainer::TrainConfig;
    use proptest::prelude::*;
    use crate::protocols::Strategy;

    #[test]
    fn counts_match_the_formulas() {
        assert_eq!(expected_evaluations(Strategy::ZeroshotCrossSession, &[3, 2]), 8);
        assert_eq!(expected_evaluations(Strategy::FinetuneCrossSubject, &[3, 2]), 12);
    }

    fn roster(sizes: &[usize]) -> Vec<Session> {
        let mut out = Vec::new();
        for (r, &n) in sizes.iter().enumerate() {
            let f = generate_synthetic_fleet(&FleetSpec {
                n_rats: 1,
                sessions_per_rat: n,
                n_samples: 1000,
                n_channels: 8,
                seed: r as u64,
                ..FleetSpec::default()
            })
            .unwrap();
            for s in f {
                let id = format!("k{r}_{}", s.id());
                let mut t = Session::new(id, format!("rat{r}"), 100.0, s.eeg().clone(), s.speed().to_vec(), s.channels().to_vec()).unwrap();
                t.metadata = s.metadata.clone();
                out.push(t);
            }
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn pair_enumeration_matches_formula(sizes in proptest::collection::vec(1usize..4, 2..4)) {
            let sessions = roster(&sizes);
            for strategy in [Strategy::ZeroshotCrossSession, Strategy::ZeroshotCrossSubject] {
                let n = sessions.iter().flat_map(|a| sessions.iter().map(move |b| (a, b)))
                    .filter(|(a, b)| is_pair(strategy, a, b)).count();
                prop_assert_eq!(n, expected_evaluations(strategy, &sizes));
            }
        }
    }

    #[test]
    fn zero_shot_linear_transfer_runs_and_counts() {
        let sessions = roster(&[3, 2]);
        let plan = ExperimentPlan::new(
            Strategy::ZeroshotCrossSession,
            DecoderSpec::new(Family::Linear, 0),
            TrainConfig::default(),
        );
        let sources = train_sources(&sessions, &plan).unwrap();
        let out = run_transfer_with_sources(&sessions, &sources, &plan).unwrap();
        assert_eq!(out.n_evaluations(), 8);
        assert_eq!(out.results.len(), 5);
        let sub = run_transfer_with_sources(&sessions, &sources, &plan.with_strategy(Strategy::FinetuneCrossSubject)).unwrap();
        assert_eq!(sub.n_evaluations(), 12);
        for a in out.audits.iter().chain(&sub.audits) {
            a.check().unwrap();
        }
        assert!(sub.audits.iter().all(|a| a.used.len() == 3));
    }

    #[test]
    fn single_source_median_is_identity() {
        let sessions = roster(&[2]);
        let plan = ExperimentPlan::new(
            Strategy::ZeroshotCrossSession,
            DecoderSpec::new(Family::Linear, 0),
            TrainConfig::default(),
        );
        let out = run_transfer_matrix(&sessions, &plan).unwrap();
        for row in &out.results {
            let p = out.pairs.iter().find(|p| p.target == row.session_id).unwrap();
            assert_eq!((row.r, row.r2), (p.r, p.r2));
        }
    }

    #[test]
    fn small_rosters_are_plan_errors() {
        let sessions = roster(&[1, 1]);
        let plan = ExperimentPlan::new(
            Strategy::ZeroshotCrossSession,
            DecoderSpec::new(Family::Linear, 0),
            TrainConfig::default(),
        );
        assert!(matches!(run_transfer_matrix(&sessions, &plan), Err(Error::Plan(_))));
        assert!(matches!(
            run_transfer_matrix(&sessions[..1], &plan.with_strategy(Strategy::ZeroshotCrossSubject)),
            Err(Error::Plan(_))
        ));
    }
}
