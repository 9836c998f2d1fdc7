//! Run configuration: TOML with dotted keys (`decoder.family = "ffnn"`).
//! Unknown keys are rejected; the resolved form lists every key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoders::{DecoderSpec, Family, LinearSolver};
use crate::dsp::Band;
use crate::error::{Error, Result};
use crate::protocols::{ExperimentPlan, FleetSpec, RegionSet, Strategy, ZeroShotNormalizer, DEFAULT_OFFSETS_MS};
use crate::session::{GateThreshold, SessionFormat};
use crate::trainer::{Checkpoint, Optimizer, TrainConfig};
use crate::util::fnv1a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every job seed is derived from it.
    pub seed: u64,
    pub data: DataConfig,
    pub decoder: DecoderConfig,
    pub train: TrainSection,
    pub experiment: ExperimentConfig,
    pub output: OutputConfig,
    /// Fleet generated when `data.synthetic` is set.
    pub synth: FleetSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Canonical session files (`.csv` with manifest, or `.lcdc`).
    pub sessions: Vec<PathBuf>,
    /// Use the `synth` fleet instead of `sessions`.
    pub synthetic: bool,
    /// Fixed IQR threshold; unset gates at `iqr_percentile`.
    pub iqr_threshold: Option<f64>,
    pub iqr_percentile: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            sessions: Vec::new(),
            synthetic: false,
            iqr_threshold: None,
            iqr_percentile: 0.10,
        }
    }
}

impl DataConfig {
    pub fn gate(&self) -> GateThreshold {
        match self.iqr_threshold {
            Some(t) => GateThreshold::Fixed(t),
            None => GateThreshold::Percentile(self.iqr_percentile),
        }
    }
}

/// Decoder hyperparameters; channel count and seed are set per job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub family: Family,
    pub ffnn_hidden: Vec<usize>,
    pub lstm_hidden: usize,
    pub head_hidden: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub conv_kernel: usize,
    pub positional_encoding: bool,
    pub n_trees: usize,
    /// 0 grows trees without a depth limit.
    pub max_depth: usize,
    /// 0 means a third of the features.
    pub max_features: usize,
    pub bootstrap: bool,
    pub linear_solver: LinearSolver,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self::from_spec(&DecoderSpec::new(Family::LstmRnn, 0))
    }
}

impl DecoderConfig {
    fn from_spec(s: &DecoderSpec) -> Self {
        Self {
            family: s.family,
            ffnn_hidden: s.ffnn_hidden.clone(),
            lstm_hidden: s.lstm_hidden,
            head_hidden: s.head_hidden,
            embed_dim: s.embed_dim,
            n_heads: s.n_heads,
            n_blocks: s.n_blocks,
            conv_kernel: s.conv_kernel,
            positional_encoding: s.positional_encoding,
            n_trees: s.n_trees,
            max_depth: s.max_depth.unwrap_or(0),
            max_features: s.max_features.unwrap_or(0),
            bootstrap: s.bootstrap,
            linear_solver: s.linear_solver,
        }
    }

    pub fn spec(&self) -> DecoderSpec {
        DecoderSpec {
            ffnn_hidden: self.ffnn_hidden.clone(),
            lstm_hidden: self.lstm_hidden,
            head_hidden: self.head_hidden,
            embed_dim: self.embed_dim,
            n_heads: self.n_heads,
            n_blocks: self.n_blocks,
            conv_kernel: self.conv_kernel,
            positional_encoding: self.positional_encoding,
            n_trees: self.n_trees,
            max_depth: (self.max_depth > 0).then_some(self.max_depth),
            max_features: (self.max_features > 0).then_some(self.max_features),
            bootstrap: self.bootstrap,
            linear_solver: self.linear_solver,
            ..DecoderSpec::new(self.family, 0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub checkpoint: Checkpoint,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let Optimizer::Adam { lr, beta1, beta2, eps } = Optimizer::default() else {
            unreachable!("default optimizer is adam")
        };
        Self {
            optimizer: OptimizerKind::Adam,
            lr,
            beta1,
            beta2,
            eps,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            checkpoint: t.checkpoint,
        }
    }
}

impl TrainSection {
    pub fn config(&self) -> TrainConfig {
        let optimizer = match self.optimizer {
            OptimizerKind::Adam => Optimizer::Adam {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            OptimizerKind::Sgd => Optimizer::Sgd { lr: self.lr },
        };
        TrainConfig {
            optimizer,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            checkpoint: self.checkpoint,
            ..TrainConfig::default()
        }
    }
}

/// Which protocol `experiment` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// `single_80` / `single_10` baselines, or a transfer matrix for the other strategies.
    Decode,
    Regions,
    Bands,
    Offsets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub strategy: Strategy,
    /// `all`, one region, or two joined by `+`.
    pub regions: String,
    pub band: Band,
    pub offset_ms: i64,
    /// Offsets swept by `kind = "offsets"`.
    pub offsets_ms: Vec<i64>,
    pub zero_shot_normalizer: ZeroShotNormalizer,
    /// Fill `wall_time_s`; tables are then no longer bitwise reproducible.
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Decode,
            strategy: Strategy::Single80,
            regions: "all".into(),
            band: Band::Fullband,
            offset_ms: 0,
            offsets_ms: DEFAULT_OFFSETS_MS.to_vec(),
            zero_shot_normalizer: ZeroShotNormalizer::Source,
            record_timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Format of session files written by `ingest` and `synth`.
    pub session_format: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            session_format: "bin".into(),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            decoder: DecoderConfig::default(),
            train: TrainSection::default(),
            experiment: ExperimentConfig::default(),
            output: OutputConfig::default(),
            synth: FleetSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string() + &span(text, e.span())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.regions()?;
        self.session_format()?;
        let mut spec = self.decoder.spec();
        spec.input_channels = 1;
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.config().validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.data.iqr_percentile) {
            return Err(Error::Config(format!("data.iqr_percentile must be in [0, 1], got {}", self.data.iqr_percentile)));
        }
        if self.experiment.kind == ExperimentKind::Offsets && self.experiment.offsets_ms.is_empty() {
            return Err(Error::Config("experiment.offsets_ms is empty".into()));
        }
        Ok(())
    }

    pub fn regions(&self) -> Result<RegionSet> {
        self.experiment
            .regions
            .parse()
            .map_err(|e: Error| Error::Config(format!("experiment.regions: {e}")))
    }

    pub fn session_format(&self) -> Result<SessionFormat> {
        match self.output.session_format.as_str() {
            "bin" | "lcdc" => Ok(SessionFormat::CanonicalBin),
            "csv" => Ok(SessionFormat::CanonicalCsv),
            other => Err(Error::Config(format!("output.session_format must be bin or csv, got {other:?}"))),
        }
    }

    pub fn plan(&self) -> Result<ExperimentPlan> {
        Ok(ExperimentPlan {
            strategy: self.experiment.strategy,
            spec: self.decoder.spec(),
            train: self.train.config(),
            regions: self.regions()?,
            band: self.experiment.band,
            offset_ms: self.experiment.offset_ms,
            master_seed: self.seed,
            zero_shot_normalizer: self.experiment.zero_shot_normalizer,
            record_timing: self.experiment.record_timing,
        })
    }

    /// Every key with its value, in a fixed order.
    pub fn resolved(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// FNV-1a of the resolved text, as 16 hex digits. The output directory
    /// is left out so the same run written elsewhere hashes the same.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir = PathBuf::new();
        format!("{:016x}", fnv1a(c.resolved().as_bytes()))
    }
}

fn span(text: &str, at: Option<std::ops::Range<usize>>) -> String {
    match at {
        Some(r) => {
            let line = text[..r.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_and_defaults() {
        let cfg = RunConfig::parse(
            "seed = 7\ndecoder.family = \"ffnn\"\ndecoder.ffnn_hidden = [32]\ntrain.max_epochs = 3\n\
             experiment.regions = \"visual+motor\"\nsynth.n_rats = 2\nsynth.signal_regions = [\"visual\"]\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        let plan = cfg.plan().unwrap();
        assert_eq!(plan.spec.family, Family::Ffnn);
        assert_eq!(plan.spec.ffnn_hidden, vec![32]);
        assert_eq!(plan.train.max_epochs, 3);
        assert_eq!(plan.regions.label(), "motor+visual");
        assert_eq!(cfg.synth.n_rats, 2);
        assert_eq!(cfg.synth.n_samples, FleetSpec::default().n_samples);
        assert_eq!(plan.train.optimizer, Optimizer::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["sede = 1", "decoder.famliy = \"ffnn\"", "[train]\nlr = 0.1\nmomentum = 0.9"] {
            let err = RunConfig::parse(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        }
        assert!(RunConfig::parse("experiment.regions = \"cerebellum\"").is_err());
        assert!(RunConfig::parse("train.lr = -1.0").is_err());
    }

    #[test]
    fn resolved_config_roundtrips_with_stable_hash() {
        let cfg = RunConfig::parse("seed = 3\ndata.iqr_threshold = 0.46\nexperiment.strategy = \"finetune_cross_subject\"").unwrap();
        let text = cfg.resolved();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(RunConfig::default().hash(), cfg.hash());
        assert_eq!(cfg.data.gate(), GateThreshold::Fixed(0.46));
    }
}
