//! The five regression families plus the speed-only recurrent baseline,
//! behind one [`Decoder`] type with a body/head parameter partition.

pub mod forest;
pub mod io;
pub mod linear;
pub mod nets;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::session::{Matrix, WindowView, WINDOW_LEN};
use crate::util::fnv1a;

pub use forest::{Forest, ForestParams};
pub use io::{load_state, load_state_as, save_state};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    RandomForest,
    Ffnn,
    LstmRnn,
    TransformerEncoder,
    SpeedRnn,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Linear,
        Family::RandomForest,
        Family::Ffnn,
        Family::LstmRnn,
        Family::TransformerEncoder,
        Family::SpeedRnn,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::RandomForest => "random_forest",
            Family::Ffnn => "ffnn",
            Family::LstmRnn => "lstm_rnn",
            Family::TransformerEncoder => "transformer_encoder",
            Family::SpeedRnn => "speed_rnn",
        }
    }

    /// Families trained by gradient descent.
    pub fn is_trainable(&self) -> bool {
        !matches!(self, Family::RandomForest)
    }

    /// Families that take the window as a flat vector.
    pub fn is_flat(&self) -> bool {
        matches!(self, Family::Linear | Family::RandomForest | Family::Ffnn)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let alias = match s {
            "lstm" => "lstm_rnn",
            "transformer" => "transformer_encoder",
            "forest" | "rf" => "random_forest",
            other => other,
        };
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == alias)
            .ok_or_else(|| Error::Argument(format!("unknown decoder family {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolver {
    /// Closed-form least squares.
    Lstsq,
    /// Same optimizer loop as the networks.
    Gradient,
}

/// Family plus every hyperparameter; only the fields of the chosen family matter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub family: Family,
    /// Channels per time step (1 for `speed_rnn`).
    pub input_channels: usize,
    pub window_len: usize,
    pub ffnn_hidden: Vec<usize>,
    pub lstm_hidden: usize,
    pub head_hidden: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub conv_kernel: usize,
    pub positional_encoding: bool,
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub linear_solver: LinearSolver,
    pub seed: u64,
}

impl DecoderSpec {
    pub fn new(family: Family, input_channels: usize) -> Self {
        Self {
            family,
            input_channels: if family == Family::SpeedRnn { 1 } else { input_channels },
            window_len: WINDOW_LEN,
            ffnn_hidden: vec![256, 64],
            lstm_hidden: 64,
            head_hidden: 32,
            embed_dim: 64,
            n_heads: 4,
            n_blocks: 1,
            conv_kernel: 3,
            positional_encoding: true,
            n_trees: 100,
            max_depth: Some(12),
            max_features: None,
            bootstrap: true,
            linear_solver: LinearSolver::Lstsq,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn flat_dim(&self) -> usize {
        self.window_len * self.input_channels
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(format!("{} spec: {m}", self.family)));
        if self.input_channels == 0 || self.window_len == 0 {
            return bad("input width and window length must be positive".into());
        }
        if self.family == Family::SpeedRnn && self.input_channels != 1 {
            return bad("speed_rnn takes one input channel".into());
        }
        match self.family {
            Family::Ffnn if self.ffnn_hidden.is_empty() || self.ffnn_hidden.contains(&0) => {
                bad("ffnn needs at least one positive hidden size".into())
            }
            Family::LstmRnn | Family::SpeedRnn if self.lstm_hidden == 0 || self.head_hidden == 0 => {
                bad("hidden sizes must be positive".into())
            }
            Family::TransformerEncoder
                if self.embed_dim == 0
                    || self.n_heads == 0
                    || self.embed_dim % self.n_heads != 0
                    || self.n_blocks == 0
                    || self.conv_kernel == 0
                    || self.conv_kernel > self.window_len
                    || self.head_hidden == 0 =>
            {
                bad(format!(
                    "need heads dividing embed ({} / {}), blocks >= 1, 1 <= kernel <= window",
                    self.embed_dim, self.n_heads
                ))
            }
            Family::RandomForest if self.n_trees == 0 || self.max_depth == Some(0) => {
                bad("forest needs trees and positive depth".into())
            }
            _ => Ok(()),
        }
    }
}

/// Named parameter tensors; names start with `body.` or `head.`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub tensors: Vec<(String, Tensor)>,
}

impl NetParams {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn is_head(name: &str) -> bool {
        name.starts_with("head.")
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.numel()).sum()
    }

    fn checksum_where(&self, pred: impl Fn(&str) -> bool) -> u64 {
        let mut bytes = Vec::new();
        for (n, t) in &self.tensors {
            if pred(n) {
                bytes.extend_from_slice(n.as_bytes());
                t.data().iter().for_each(|v| bytes.extend_from_slice(&v.to_le_bytes()));
            }
        }
        fnv1a(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecoderState {
    Net(NetParams),
    Forest(Forest),
}

/// Standardisation of the regression target: the model output `z` maps to
/// `z · scale + shift`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetScaling {
    pub shift: f64,
    pub scale: f64,
}

impl Default for TargetScaling {
    fn default() -> Self {
        Self { shift: 0.0, scale: 1.0 }
    }
}

impl TargetScaling {
    /// Mean and population std of `y`, rounded to `f32`.
    pub fn fit(y: &[f64]) -> Self {
        if y.is_empty() {
            return Self::default();
        }
        let n = y.len() as f64;
        let mu = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            shift: f32_round(mu),
            scale: if sd > 1e-6 { f32_round(sd) } else { 1.0 },
        }
    }

    pub fn to_model(&self, y: f64) -> f64 {
        (y - self.shift) / self.scale
    }

    pub fn from_model(&self, z: f64) -> f64 {
        z * self.scale + self.shift
    }
}

pub(crate) fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

/// A decoder: its spec, parameters and target scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub spec: DecoderSpec,
    pub state: DecoderState,
    pub target: TargetScaling,
}

impl Decoder {
    /// Freshly initialised decoder (seeded by `spec.seed`). Forests start empty.
    pub fn new(spec: DecoderSpec) -> Result<Self> {
        spec.validate()?;
        let state = match spec.family {
            Family::RandomForest => DecoderState::Forest(Forest::empty(spec.flat_dim())),
            _ => DecoderState::Net(nets::init(&spec)),
        };
        Ok(Self {
            spec,
            state,
            target: TargetScaling::default(),
        })
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn net(&self) -> Option<&NetParams> {
        match &self.state {
            DecoderState::Net(p) => Some(p),
            DecoderState::Forest(_) => None,
        }
    }

    pub fn net_mut(&mut self) -> Option<&mut NetParams> {
        match &mut self.state {
            DecoderState::Net(p) => Some(p),
            DecoderState::Forest(_) => None,
        }
    }

    /// Shape the model expects for a batch of `b` windows.
    pub fn input_shape(&self, b: usize) -> Vec<usize> {
        if self.spec.family.is_flat() {
            vec![b, self.spec.flat_dim()]
        } else {
            vec![b, self.spec.window_len, self.spec.input_channels]
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let b = x.shape().first().copied().unwrap_or(0);
        let want = self.input_shape(b);
        if x.shape() != want.as_slice() {
            return Err(Error::shape("decoder input", &want, x.shape()));
        }
        Ok(b)
    }

    /// Builds the model output `[B]` (in standardised target units) on `g`.
    /// `vars` follow the order of [`NetParams::tensors`].
    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        nets::forward(&self.spec, vars, g, x)
    }

    /// Predictions in target units for a batch (`[B, D]` or `[B, L, C]`).
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        let b = self.check_input(x)?;
        let raw = match &self.state {
            DecoderState::Forest(f) => {
                let d = self.spec.flat_dim();
                (0..b).map(|i| f.predict_row(&x.data()[i * d..(i + 1) * d])).collect()
            }
            DecoderState::Net(p) => {
                let mut out = Vec::with_capacity(b);
                let chunk = 512;
                let row = x.numel() / b.max(1);
                let mut start = 0;
                while start < b {
                    let n = chunk.min(b - start);
                    let mut shape = x.shape().to_vec();
                    shape[0] = n;
                    let xt = Tensor::new(&shape, x.data()[start * row..(start + n) * row].to_vec())?;
                    let mut g = Graph::new();
                    let vars: Vec<Var> = p.tensors.iter().map(|(_, t)| g.input(t.clone())).collect();
                    let xi = g.input(xt);
                    let y = self.forward(&mut g, &vars, xi)?;
                    out.extend(g.value(y).data().iter().map(|z| self.target.from_model(*z)));
                    start += n;
                }
                return Ok(out);
            }
        };
        Ok(raw)
    }

    /// Checksum of body parameters (0 for families without a body).
    pub fn body_checksum(&self) -> u64 {
        self.net().map_or(0, |p| p.checksum_where(|n| !NetParams::is_head(n)))
    }

    pub fn head_checksum(&self) -> u64 {
        self.net().map_or(0, |p| p.checksum_where(NetParams::is_head))
    }

    /// Checksum over every parameter (trees included).
    pub fn checksum(&self) -> u64 {
        match &self.state {
            DecoderState::Net(p) => p.checksum_where(|_| true),
            DecoderState::Forest(f) => f.checksum(),
        }
    }
}

/// Stacks windows from `source` (C×T, already normalised) into a model input:
/// `[B, L·C]` for flat families, `[B, L, C]` otherwise. Rows are time-major:
/// row `t` holds every channel at sample `start + t`.
pub fn featurize(source: &Matrix, windows: &[WindowView], spec: &DecoderSpec) -> Result<Tensor> {
    if source.rows != spec.input_channels {
        return Err(Error::shape(
            "featurize",
            &[spec.input_channels],
            &[source.rows],
        ));
    }
    let row = WINDOW_LEN * source.rows;
    let mut data = vec![0.0; windows.len() * row];
    for (w, out) in windows.iter().zip(data.chunks_mut(row)) {
        w.fill(source, out);
    }
    let shape: Vec<usize> = if spec.family.is_flat() {
        vec![windows.len(), row]
    } else {
        vec![windows.len(), WINDOW_LEN, source.rows]
    };
    Tensor::new(&shape, data)
}

/// Clips predictions below `level` (optional post-processing; off in the core).
pub fn clip_below(preds: &mut [f64], level: f64) {
    preds.iter_mut().for_each(|p| *p = p.max(level));
}
