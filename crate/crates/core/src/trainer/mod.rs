//! Mini-batch training with validation early stopping, and head-only fine-tuning.

mod optim;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::decoders::linear::fit_linear;
use crate::decoders::{
    Decoder, DecoderSpec, DecoderState, Family, Forest, ForestParams, LinearSolver, NetParams, TargetScaling,
};
use crate::error::{Error, Result};

pub use optim::Optimizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Checkpoint {
    /// Keep the epoch with the lowest validation MSE.
    Best,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub checkpoint: Checkpoint,
    pub seed: u64,
    pub freeze_body: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::default(),
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
            checkpoint: Checkpoint::Best,
            seed: 0,
            freeze_body: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lr = self.optimizer.learning_rate();
        if !(lr > 0.0 && lr.is_finite()) || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Argument(format!(
                "train config needs lr > 0, batch > 0, patience >= 1 (got {lr}, {}, {})",
                self.batch_size, self.patience
            )));
        }
        if let Optimizer::Adam { beta1, beta2, eps, .. } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return Err(Error::Argument("adam needs betas in [0, 1) and eps > 0".into()));
            }
        }
        Ok(())
    }
}

/// Model inputs (`[N, ...]`) with one target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: Tensor, y: Vec<f64>) -> Result<Self> {
        if x.shape().first() != Some(&y.len()) {
            return Err(Error::shape("dataset", x.shape(), &[y.len()]));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn row_len(&self) -> usize {
        self.x.numel() / self.len().max(1)
    }

    fn gather(&self, idx: &[usize]) -> Tensor {
        let r = self.row_len();
        let mut data = Vec::with_capacity(idx.len() * r);
        for &i in idx {
            data.extend_from_slice(&self.x.data()[i * r..(i + 1) * r]);
        }
        let mut shape = self.x.shape().to_vec();
        shape[0] = idx.len();
        Tensor::new(&shape, data).expect("gathered rows keep the row shape")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// Epoch 0 is the state before any update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub family: Family,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
    pub wall_time_s: f64,
    pub checksum: u64,
}

impl TrainReport {
    /// One JSON object per epoch, then a summary object.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            let row = serde_json::json!({
                "epoch": e.epoch,
                "train_mse": e.train_mse,
                "val_mse": e.val_mse,
                "gap": e.val_mse - e.train_mse,
            });
            out.push_str(&row.to_string());
            out.push('\n');
        }
        let summary = serde_json::json!({
            "summary": true,
            "family": self.family,
            "epochs_run": self.epochs.last().map_or(0, |e| e.epoch),
            "best_epoch": self.best_epoch,
            "best_val_mse": self.best_val_mse,
            "stopped_early": self.stopped_early,
            "wall_time_s": self.wall_time_s,
            "checksum": format!("{:016x}", self.checksum),
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Strict improvement resets the counter.
    pub fn observe(&mut self, epoch: usize, val: f64) -> Verdict {
        if val < self.best {
            self.best = val;
            self.best_epoch = epoch;
            self.stale = 0;
            Verdict::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Continue
            }
        }
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

struct LoopOutcome<S> {
    state: S,
    epochs: Vec<EpochRecord>,
    best_epoch: usize,
    best_val: f64,
    stopped_early: bool,
}

/// Epoch driver shared by every gradient-trained family. `step` runs one epoch
/// and returns `(train_mse, val_mse)`.
fn run_epochs<S: Clone>(
    cfg: &TrainConfig,
    mut state: S,
    initial: (f64, f64),
    mut step: impl FnMut(&mut S, usize) -> Result<(f64, f64)>,
) -> Result<LoopOutcome<S>> {
    let mut stopper = EarlyStopper::new(cfg.patience);
    stopper.observe(0, initial.1);
    let mut epochs = vec![EpochRecord {
        epoch: 0,
        train_mse: initial.0,
        val_mse: initial.1,
    }];
    let mut best = state.clone();
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let (tr, va) = step(&mut state, epoch)?;
        if !tr.is_finite() || !va.is_finite() {
            return Err(Error::Divergence {
                epoch,
                learning_rate: cfg.optimizer.learning_rate(),
                detail: format!("train mse {tr}, val mse {va}"),
            });
        }
        epochs.push(EpochRecord {
            epoch,
            train_mse: tr,
            val_mse: va,
        });
        match stopper.observe(epoch, va) {
            Verdict::Improved => best = state.clone(),
            Verdict::Continue => {}
            Verdict::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_epoch, best_val) = stopper.best();
    Ok(LoopOutcome {
        state: match cfg.checkpoint {
            Checkpoint::Best => best,
            Checkpoint::Last => state,
        },
        epochs,
        best_epoch,
        best_val,
        stopped_early,
    })
}

fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64
}

fn check_data(dec: &Decoder, train: &Dataset, val: &Dataset) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Argument(format!(
            "training needs nonempty train and validation sets (got {} and {})",
            train.len(),
            val.len()
        )));
    }
    for d in [train, val] {
        let want = dec.input_shape(d.len());
        if d.x.shape() != want.as_slice() {
            return Err(Error::shape("train input", &want, d.x.shape()));
        }
    }
    Ok(())
}

/// One optimizer step on a mini-batch; returns the batch loss in model units.
fn sgd_step(
    dec: &mut Decoder,
    opt: &mut optim::OptimState,
    trainable: &[bool],
    x: Tensor,
    z: Vec<f64>,
) -> Result<f64> {
    let p = dec.net().expect("gradient training needs tensors");
    let mut g = Graph::new();
    let vars: Vec<Var> = p
        .tensors
        .iter()
        .zip(trainable)
        .map(|((_, t), &tr)| if tr { g.param(t.clone()) } else { g.input(t.clone()) })
        .collect();
    let b = z.len();
    let xi = g.input(x);
    let zi = g.input(Tensor::new(&[b], z)?);
    let out = dec.forward(&mut g, &vars, xi)?;
    let loss = g.mse(out, zi)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Ok(value);
    }
    let grads = g.backward(loss)?;
    opt.begin_step();
    let p = dec.net_mut().expect("tensors");
    for (slot, ((_, t), v)) in p.tensors.iter_mut().zip(&vars).enumerate() {
        if !trainable[slot] {
            continue;
        }
        let grad = grads.get(*v).expect("trainable leaves always get a gradient");
        opt.update(slot, t.data_mut(), grad);
        // parameters live on the f32 grid so saved models predict identically
        t.data_mut().iter_mut().for_each(|w| *w = *w as f32 as f64);
    }
    Ok(value)
}

fn gradient_train(dec: &Decoder, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<LoopOutcome<Decoder>> {
    let p: &NetParams = dec.net().expect("tensors");
    let trainable: Vec<bool> = p.tensors.iter().map(|(n, _)| !cfg.freeze_body || NetParams::is_head(n)).collect();
    let sizes: Vec<usize> = p.tensors.iter().map(|(_, t)| t.numel()).collect();
    let mut opt = cfg.optimizer.state(&sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let initial = (mse(&dec.predict(&train.x)?, &train.y), mse(&dec.predict(&val.x)?, &val.y));
    run_epochs(cfg, dec.clone(), initial, |d, epoch| {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = train.gather(chunk);
            let z: Vec<f64> = chunk.iter().map(|&i| d.target.to_model(train.y[i])).collect();
            let loss = sgd_step(d, &mut opt, &trainable, x, z)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    learning_rate: cfg.optimizer.learning_rate(),
                    detail: format!("batch loss {loss}"),
                });
            }
            total += loss * chunk.len() as f64;
        }
        let tr = total / train.len() as f64 * d.target.scale * d.target.scale;
        Ok((tr, mse(&d.predict(&val.x)?, &val.y)))
    })
}

fn single_fit_report(dec: &Decoder, train: &Dataset, val: &Dataset, start: Instant) -> Result<TrainReport> {
    let tr = mse(&dec.predict(&train.x)?, &train.y);
    let va = mse(&dec.predict(&val.x)?, &val.y);
    if !tr.is_finite() || !va.is_finite() {
        return Err(Error::Fit(format!("{} fit produced non-finite error", dec.family())));
    }
    Ok(TrainReport {
        family: dec.family(),
        epochs: vec![EpochRecord {
            epoch: 1,
            train_mse: tr,
            val_mse: va,
        }],
        best_epoch: 1,
        best_val_mse: va,
        stopped_early: false,
        wall_time_s: start.elapsed().as_secs_f64(),
        checksum: dec.checksum(),
    })
}

/// Trains `dec` and returns the checkpoint chosen by `cfg.checkpoint`.
/// Forests and closed-form linear decoders are fitted in one pass.
pub fn train(dec: &Decoder, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<(Decoder, TrainReport)> {
    cfg.validate()?;
    check_data(dec, train, val)?;
    let start = Instant::now();
    let mut d = dec.clone();
    match (d.family(), d.spec.linear_solver) {
        (Family::RandomForest, _) => {
            let s = &d.spec;
            let params = ForestParams {
                n_trees: s.n_trees,
                max_depth: s.max_depth,
                max_features: s.max_features,
                bootstrap: s.bootstrap,
                seed: s.seed,
            };
            d.target = TargetScaling::default();
            d.state = DecoderState::Forest(Forest::fit(train.x.data(), s.flat_dim(), &train.y, &params)?);
            let rep = single_fit_report(&d, train, val, start)?;
            return Ok((d, rep));
        }
        (Family::Linear, LinearSolver::Lstsq) => {
            fit_linear(&mut d, &train.x, &train.y)?;
            let rep = single_fit_report(&d, train, val, start)?;
            return Ok((d, rep));
        }
        _ => {}
    }
    if !cfg.freeze_body {
        d.target = TargetScaling::fit(&train.y);
    }
    let out = gradient_train(&d, train, val, cfg)?;
    let report = TrainReport {
        family: d.family(),
        epochs: out.epochs,
        best_epoch: out.best_epoch,
        best_val_mse: out.best_val,
        stopped_early: out.stopped_early,
        wall_time_s: start.elapsed().as_secs_f64(),
        checksum: out.state.checksum(),
    };
    Ok((out.state, report))
}

/// Retrains only the head of `pretrained` on a calibration set. The target
/// scaling of the pretrained model is kept.
pub fn fine_tune(
    pretrained: &Decoder,
    expected: &DecoderSpec,
    calib: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Decoder, TrainReport)> {
    if pretrained.spec.family != expected.family || pretrained.spec.input_channels != expected.input_channels {
        return Err(Error::SpecMismatch(format!(
            "pretrained {} over {} channels, expected {} over {}",
            pretrained.spec.family, pretrained.spec.input_channels, expected.family, expected.input_channels
        )));
    }
    if !pretrained.family().is_trainable() {
        return Err(Error::SpecMismatch(format!("{} has no head to fine-tune", pretrained.family())));
    }
    let cfg = TrainConfig {
        freeze_body: true,
        ..cfg.clone()
    };
    if cfg.max_epochs == 0 {
        cfg.validate()?;
        check_data(pretrained, calib, val)?;
        let start = Instant::now();
        let va = mse(&pretrained.predict(&val.x)?, &val.y);
        let tr = mse(&pretrained.predict(&calib.x)?, &calib.y);
        return Ok((
            pretrained.clone(),
            TrainReport {
                family: pretrained.family(),
                epochs: vec![EpochRecord {
                    epoch: 0,
                    train_mse: tr,
                    val_mse: va,
                }],
                best_epoch: 0,
                best_val_mse: va,
                stopped_early: false,
                wall_time_s: start.elapsed().as_secs_f64(),
                checksum: pretrained.checksum(),
            },
        ));
    }
    train(pretrained, calib, val, &cfg)
}
