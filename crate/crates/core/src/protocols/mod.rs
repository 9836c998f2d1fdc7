//! Experiment protocols: single-session baselines, transfer variants, region,
//! band and temporal-offset attribution, and the synthetic fleet they are
//! verified on.

mod analysis;
mod pipeline;
mod results;
pub mod synth;
mod transfer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decoders::DecoderSpec;
use crate::dsp::Band;
use crate::error::{Error, Result};
use crate::session::{Region, Session};
use crate::trainer::TrainConfig;
use crate::util::derive_seed;

pub use analysis::{
    run_band_analysis, run_offset_analysis, run_region_analysis, AutocorrCurve, BandCell, CurveFit, OffsetAnalysis,
    OffsetSummary, RegionCell, RegionMatrix, DEFAULT_OFFSETS_MS,
};
pub use pipeline::{
    evaluate, run_single_session, run_single_sessions, score_session, segment_windows, strategy_segments, DataAudit, SampleSet, Scored,
    SessionRun,
};
pub use results::{parse_results_csv, results_csv, RESULTS_HEADER};
pub use synth::{generate_synthetic_fleet, FleetSpec, Law, RatTransform};
pub use transfer::{
    expected_evaluations, run_transfer_matrix, run_transfer_with_sources, train_sources, PairEval, TransferOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Single80,
    Single10,
    ZeroshotCrossSession,
    ZeroshotCrossSubject,
    FinetuneCrossSession,
    FinetuneCrossSubject,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Single80,
        Strategy::Single10,
        Strategy::ZeroshotCrossSession,
        Strategy::ZeroshotCrossSubject,
        Strategy::FinetuneCrossSession,
        Strategy::FinetuneCrossSubject,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Single80 => "single_80",
            Strategy::Single10 => "single_10",
            Strategy::ZeroshotCrossSession => "zeroshot_cross_session",
            Strategy::ZeroshotCrossSubject => "zeroshot_cross_subject",
            Strategy::FinetuneCrossSession => "finetune_cross_session",
            Strategy::FinetuneCrossSubject => "finetune_cross_subject",
        }
    }

    pub fn is_single(&self) -> bool {
        matches!(self, Strategy::Single80 | Strategy::Single10)
    }

    pub fn is_cross_subject(&self) -> bool {
        matches!(self, Strategy::ZeroshotCrossSubject | Strategy::FinetuneCrossSubject)
    }

    pub fn is_finetune(&self) -> bool {
        matches!(self, Strategy::FinetuneCrossSession | Strategy::FinetuneCrossSubject)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown strategy {s:?}")))
    }
}

/// One or two regions, or every channel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionSet {
    All,
    Subset(Vec<Region>),
}

impl RegionSet {
    pub fn single(r: Region) -> Self {
        RegionSet::Subset(vec![r])
    }

    pub fn pair(a: Region, b: Region) -> Result<Self> {
        Self::subset(vec![a, b])
    }

    /// Sorted, deduplicated subset of size 1 or 2.
    pub fn subset(mut regions: Vec<Region>) -> Result<Self> {
        regions.sort();
        regions.dedup();
        if regions.is_empty() || regions.len() > 2 {
            return Err(Error::Argument(format!(
                "a region set holds one or two regions, got {}",
                regions.len()
            )));
        }
        Ok(RegionSet::Subset(regions))
    }

    pub fn label(&self) -> String {
        match self {
            RegionSet::All => "all".into(),
            RegionSet::Subset(r) => r.iter().map(|x| x.as_str()).collect::<Vec<_>>().join("+"),
        }
    }

    /// Channel indices of `s` in this set (both hemispheres), in session order.
    pub fn channels(&self, s: &Session) -> Vec<usize> {
        match self {
            RegionSet::All => (0..s.n_channels()).collect(),
            RegionSet::Subset(r) => s.channels_in(r),
        }
    }
}

impl fmt::Display for RegionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for RegionSet {
    type Err = Error;
    /// `all`, or one or two region names joined by `+` or `,`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "all" {
            return Ok(RegionSet::All);
        }
        let regions = s
            .split(['+', ','])
            .map(|p| p.trim().parse::<Region>().map_err(|e| Error::Argument(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Self::subset(regions)
    }
}

/// Normalizer used when a source model is applied to a target zero-shot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroShotNormalizer {
    /// The source session's training statistics.
    #[default]
    Source,
    /// Statistics of the target's first 10%.
    Target,
}

/// One experiment configuration; one plan yields one results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub strategy: Strategy,
    /// `input_channels` and `seed` are filled in per job.
    pub spec: DecoderSpec,
    pub train: TrainConfig,
    pub regions: RegionSet,
    pub band: Band,
    pub offset_ms: i64,
    pub master_seed: u64,
    pub zero_shot_normalizer: ZeroShotNormalizer,
    /// Fill `wall_time_s` in results (breaks bitwise reproducibility of tables).
    pub record_timing: bool,
}

impl ExperimentPlan {
    pub fn new(strategy: Strategy, spec: DecoderSpec, train: TrainConfig) -> Self {
        Self {
            strategy,
            spec,
            train,
            regions: RegionSet::All,
            band: Band::Fullband,
            offset_ms: 0,
            master_seed: 0,
            zero_shot_normalizer: ZeroShotNormalizer::Source,
            record_timing: false,
        }
    }

    /// `strategy|regions|band|offset|family`.
    pub fn plan_id(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}",
            self.strategy,
            self.regions.label(),
            self.band.as_str(),
            self.offset_ms,
            self.spec.family
        )
    }

    /// Seed of the job running this plan on `session_id`.
    pub fn job_seed(&self, session_id: &str) -> u64 {
        derive_seed(self.master_seed, &[session_id, &self.plan_id()])
    }

    pub fn with_strategy(&self, strategy: Strategy) -> Self {
        Self {
            strategy,
            ..self.clone()
        }
    }
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub session_id: String,
    pub rat_id: String,
    pub strategy: Strategy,
    pub region_set: String,
    pub band: Band,
    pub offset_ms: i64,
    pub model: String,
    pub r: f64,
    pub r2: f64,
    pub n_test_windows: usize,
    pub seed: u64,
    pub wall_time_s: Option<f64>,
}

/// Runs `f` over `items` on the current rayon pool, keeping input order.
pub(crate) fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> Result<U> + Sync + Send) -> Result<Vec<U>> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_roundtrip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("single_50".parse::<Strategy>().is_err());
    }

    #[test]
    fn region_sets_parse_and_sort() {
        let a: RegionSet = "visual+motor".parse().unwrap();
        let b: RegionSet = "motor,visual".parse().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.label(), "motor+visual");
        assert_eq!("all".parse::<RegionSet>().unwrap(), RegionSet::All);
        assert!("motor+visual+somatomotor".parse::<RegionSet>().is_err());
        assert!("nose".parse::<RegionSet>().is_err());
    }

    #[test]
    fn plan_id_and_seed() {
        let p = ExperimentPlan::new(
            Strategy::Single80,
            DecoderSpec::new(crate::decoders::Family::LstmRnn, 4),
            TrainConfig::default(),
        );
        assert_eq!(p.plan_id(), "single_80|all|fullband|0|lstm_rnn");
        assert_eq!(p.job_seed("a"), p.job_seed("a"));
        assert_ne!(p.job_seed("a"), p.job_seed("b"));
        assert_ne!(p.job_seed("a"), p.with_strategy(Strategy::Single10).job_seed("a"));
    }
}
