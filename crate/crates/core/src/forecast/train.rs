//! The training recipe: mini-batch Adam with value-then-norm gradient
//! clipping, exponential learning-rate decay, and early stopping on
//! validation loss with best-weight restore.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::net::Network;
use super::{ModelKind, ModelSpec, TrainedModel};
use crate::dataset::WindowSet;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Mae,
    /// Binary cross-entropy on logits, softplus-stable.
    Bcel,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            "bcel" => Ok(LossKind::Bcel),
            other => Err(Error::config(format!("unknown loss {other:?}"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
            LossKind::Bcel => "bcel",
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub clip_value: f64,
    pub clip_norm: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub min_delta: f64,
    pub patience: usize,
    pub restore_best: bool,
    pub lr_gamma: f64,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            clip_value: 0.5,
            clip_norm: 1.0,
            batch: 254,
            max_epochs: 500,
            min_delta: 1e-6,
            patience: 10,
            restore_best: true,
            lr_gamma: 0.999,
            loss: LossKind::Mse,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.lr,
            self.clip_value,
            self.clip_norm,
            self.min_delta,
            self.lr_gamma,
        ];
        if positive.iter().any(|&v| v <= 0.0) {
            return Err(Error::config("training parameters must be positive"));
        }
        if self.batch == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::config("batch, max_epochs, and patience must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

pub(super) fn loss_value(kind: LossKind, pred: &[f64], target: &[f64]) -> f64 {
    let n = pred.len() as f64;
    match kind {
        LossKind::Mse => {
            pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n
        }
        LossKind::Mae => pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / n,
        LossKind::Bcel => {
            pred.iter()
                .zip(target)
                .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
                .sum::<f64>()
                / n
        }
    }
}

/// Writes `d loss_total / d pred` into `dout`, where the contribution of
/// this sample to the batch loss is `loss(pred, target) / batch_len`.
pub(super) fn loss_grad(
    kind: LossKind,
    pred: &[f64],
    target: &[f64],
    batch_len: usize,
    dout: &mut [f64],
) {
    let scale = 1.0 / (pred.len() as f64 * batch_len as f64);
    match kind {
        LossKind::Mse => {
            for ((d, p), t) in dout.iter_mut().zip(pred).zip(target) {
                *d = 2.0 * (p - t) * scale;
            }
        }
        LossKind::Mae => {
            for ((d, p), t) in dout.iter_mut().zip(pred).zip(target) {
                *d = (p - t).signum() * scale;
            }
        }
        LossKind::Bcel => {
            for ((d, &z), t) in dout.iter_mut().zip(pred).zip(target) {
                let s = 1.0 / (1.0 + (-z).exp());
                *d = (s - t) * scale;
            }
        }
    }
}

/// Per-element clip to `±clip_value`, then global L2-norm clip to
/// `clip_norm`, in that order.
pub fn clip_gradients(grads: &mut [f64], clip_value: f64, clip_norm: f64) {
    for g in grads.iter_mut() {
        *g = g.clamp(-clip_value, clip_value);
    }
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > clip_norm {
        let scale = clip_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Trains `spec` on the train windows, early-stopping on the validation
/// windows. Deterministic given the config seed; runs single-threaded.
pub fn train(
    spec: &ModelSpec,
    train_windows: &WindowSet,
    val_windows: &WindowSet,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    spec.validate()?;
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(Error::invariant("train and validation window sets must be non-empty"));
    }
    for set in [train_windows, val_windows] {
        if set.geometry().lookback != spec.lookback
            || set.geometry().horizon != spec.horizon
            || set.n_readings() != spec.input_dim
        {
            return Err(Error::Geometry(
                "window set geometry does not match the model spec".into(),
            ));
        }
    }

    if spec.kind == ModelKind::Persistence {
        return Ok(TrainedModel {
            spec: spec.clone(),
            params: Vec::new(),
            history: Vec::new(),
        });
    }

    let net = Network::build(spec)?;
    let mut rng = rng::stream(cfg.seed, tag::INIT, 0);
    let mut params = net.init_params(&mut rng);
    let mut grads = vec![0.0; net.n_params()];
    let mut adam = Adam::new(net.n_params());
    let mut ws = net.workspace();

    let flat = spec.lookback * spec.input_dim;
    let mut lookback = vec![0.0; flat];
    let mut target = vec![0.0; spec.horizon];
    let mut out = vec![0.0; spec.horizon];
    let mut dout = vec![0.0; spec.horizon];

    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_params: Option<Vec<f64>> = None;
    let mut bad_epochs = 0usize;

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr * cfg.lr_gamma.powi(epoch as i32);
        let mut shuffle_rng = rng::stream(cfg.seed, tag::SHUFFLE, epoch as u64);
        order.shuffle(&mut shuffle_rng);

        let mut train_loss_sum = 0.0;
        for batch in order.chunks(cfg.batch) {
            grads.fill(0.0);
            for &w in batch {
                let ref_permit = train_windows.fill(w, &mut lookback, &mut target);
                net.forward(&params, &lookback, ref_permit, &mut ws, &mut out);
                train_loss_sum += loss_value(cfg.loss, &out, &target);
                loss_grad(cfg.loss, &out, &target, batch.len(), &mut dout);
                net.backward(&params, &lookback, &mut ws, &dout, &mut grads);
            }
            clip_gradients(&mut grads, cfg.clip_value, cfg.clip_norm);
            adam.update(&mut params, &grads, lr);
        }
        let train_loss = train_loss_sum / train_windows.len() as f64;

        let mut val_loss_sum = 0.0;
        for w in 0..val_windows.len() {
            let ref_permit = val_windows.fill(w, &mut lookback, &mut target);
            net.forward(&params, &lookback, ref_permit, &mut ws, &mut out);
            val_loss_sum += loss_value(cfg.loss, &out, &target);
        }
        let val_loss = val_loss_sum / val_windows.len() as f64;

        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("non-finite loss (train {train_loss}, val {val_loss})"),
            });
        }
        history.push(EpochStats { train_loss, val_loss, lr });

        if best_val - val_loss >= cfg.min_delta {
            best_val = val_loss;
            best_params = Some(params.clone());
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= cfg.patience {
                break;
            }
        }
    }

    if cfg.restore_best {
        if let Some(best) = best_params {
            params = best;
        }
    }
    Ok(TrainedModel { spec: spec.clone(), params, history })
}
