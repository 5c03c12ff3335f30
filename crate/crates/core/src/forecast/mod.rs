//! From-scratch forecasters: persistence, linear, single-hidden-layer
//! network, and a stacked LSTM, all trained with the same recipe
//! (mini-batch Adam, value-then-norm gradient clipping, early stopping on
//! validation loss, exponential learning-rate decay).
//!
//! All training arithmetic is 64-bit and single-threaded, so a `(spec,
//! data, config, seed)` tuple always produces a bit-identical model.

mod gradcheck;
mod net;
mod train;

pub use gradcheck::grad_check;
pub use train::{train, EpochStats, TrainConfig};

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::dataset::WindowSample;
use crate::error::{Error, Result};
pub(crate) use net::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Persistence,
    Linear,
    Mlp,
    Lstm,
}

/// How raw network outputs are interpreted downstream: `Raw` outputs are
/// clamped to `[0, 1]` at detection time, `Logits` go through the logistic
/// function. Training never transforms `Raw` outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Raw,
    Logits,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Reading-device count fed to the look-back.
    pub input_dim: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub hidden: usize,
    pub layers: usize,
    pub head: OutputHead,
}

impl ModelSpec {
    pub fn persistence(input_dim: usize, lookback: usize, horizon: usize) -> Self {
        Self {
            kind: ModelKind::Persistence,
            input_dim,
            lookback,
            horizon,
            hidden: 0,
            layers: 0,
            head: OutputHead::Raw,
        }
    }

    pub fn linear(input_dim: usize, lookback: usize, horizon: usize) -> Self {
        Self {
            kind: ModelKind::Linear,
            input_dim,
            lookback,
            horizon,
            hidden: 0,
            layers: 0,
            head: OutputHead::Raw,
        }
    }

    pub fn mlp(input_dim: usize, lookback: usize, horizon: usize, hidden: usize) -> Self {
        Self {
            kind: ModelKind::Mlp,
            input_dim,
            lookback,
            horizon,
            hidden,
            layers: 1,
            head: OutputHead::Raw,
        }
    }

    pub fn lstm(
        input_dim: usize,
        lookback: usize,
        horizon: usize,
        hidden: usize,
        layers: usize,
    ) -> Self {
        Self {
            kind: ModelKind::Lstm,
            input_dim,
            lookback,
            horizon,
            hidden,
            layers,
            head: OutputHead::Raw,
        }
    }

    pub fn with_head(mut self, head: OutputHead) -> Self {
        self.head = head;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.horizon == 0 {
            return Err(Error::config("lookback and horizon must be >= 1"));
        }
        match self.kind {
            ModelKind::Persistence => Ok(()),
            ModelKind::Linear => {
                if self.input_dim == 0 {
                    return Err(Error::config("linear model needs input_dim >= 1"));
                }
                Ok(())
            }
            ModelKind::Mlp => {
                if self.input_dim == 0 || self.hidden == 0 {
                    return Err(Error::config("mlp needs input_dim and hidden >= 1"));
                }
                Ok(())
            }
            ModelKind::Lstm => {
                if self.input_dim == 0 || self.hidden == 0 || self.layers == 0 {
                    return Err(Error::config("lstm needs input_dim, hidden, and layers >= 1"));
                }
                Ok(())
            }
        }
    }

    /// Exact trainable-parameter count. The LSTM convention carries two bias
    /// vectors per layer, one on the input path and one on the recurrence.
    pub fn param_count(&self) -> usize {
        let flat = self.lookback * self.input_dim;
        match self.kind {
            ModelKind::Persistence => 0,
            ModelKind::Linear => flat * self.horizon + self.horizon,
            ModelKind::Mlp => {
                flat * self.hidden + self.hidden + self.hidden * self.horizon + self.horizon
            }
            ModelKind::Lstm => {
                let h = self.hidden;
                let mut total = 0;
                let mut input = self.input_dim;
                for _ in 0..self.layers {
                    total += 4 * (h * input + h * h + 2 * h);
                    input = h;
                }
                total + h * self.horizon + self.horizon
            }
        }
    }
}

pub type LossKind = train::LossKind;

/// Serialized forecaster: spec, flat parameter vector, training history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub params: Vec<f64>,
    pub history: Vec<EpochStats>,
}

impl TrainedModel {
    /// Zero-parameter shell for persistence, or zero-initialized weights.
    pub fn zeros(spec: ModelSpec) -> Self {
        let n = spec.param_count();
        Self { spec, params: vec![0.0; n], history: Vec::new() }
    }

    /// Seeded uniform init in `±1/sqrt(fan_in)` per tensor.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let net = Network::build(&spec)?;
        let mut rng = crate::rng::stream(seed, crate::rng::tag::INIT, 0);
        let params = net.init_params(&mut rng);
        Ok(Self { spec, params, history: Vec::new() })
    }
}

/// Raw model output for one window; `Raw` heads are not clamped here.
pub fn forward(model: &TrainedModel, window: &WindowSample) -> Result<Vec<f64>> {
    let spec = &model.spec;
    if window.geometry.lookback != spec.lookback
        || window.geometry.horizon != spec.horizon
        || window.lookback.len() != spec.lookback * spec.input_dim
    {
        return Err(Error::Geometry(format!(
            "window geometry {:?} does not match model spec (lookback {}, horizon {}, input {})",
            window.geometry, spec.lookback, spec.horizon, spec.input_dim
        )));
    }
    let net = Network::build(spec)?;
    let mut ws = net.workspace();
    let mut out = vec![0.0; spec.horizon];
    net.forward(&model.params, &window.lookback, window.ref_permit, &mut ws, &mut out);
    Ok(out)
}

/// Reusable forward pass; keeps the workspace across calls for hot loops.
pub struct Runner {
    net: Network,
    ws: net::Workspace,
    out: Vec<f64>,
}

impl Runner {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        let net = Network::build(spec)?;
        let ws = net.workspace();
        let out = vec![0.0; spec.horizon];
        Ok(Self { net, ws, out })
    }

    pub fn run(&mut self, params: &[f64], lookback: &[f64], ref_permit: f64) -> &[f64] {
        self.net.forward(params, lookback, ref_permit, &mut self.ws, &mut self.out);
        &self.out
    }
}

/// Loss over equal-length prediction/target vectors.
pub fn loss(kind: LossKind, predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::invariant("loss needs equal-length non-empty vectors"));
    }
    Ok(train::loss_value(kind, predictions, targets))
}

pub const MODEL_MAGIC: [u8; 4] = *b"PSM1";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    spec: ModelSpec,
    history: Vec<EpochStats>,
}

/// PSM1: magic, u32 version, u32 header length, JSON header (spec and
/// history), then parameters as little-endian f64. Bit-exact round trip.
pub fn write_model<W: Write>(model: &TrainedModel, mut sink: W) -> Result<u64> {
    if model.params.len() != model.spec.param_count() {
        return Err(Error::invariant(format!(
            "parameter vector has {} entries, spec wants {}",
            model.params.len(),
            model.spec.param_count()
        )));
    }
    let header = serde_json::to_vec(&ModelHeader {
        spec: model.spec.clone(),
        history: model.history.clone(),
    })?;
    let mut written = 0u64;
    sink.write_all(&MODEL_MAGIC)?;
    sink.write_all(&MODEL_VERSION.to_le_bytes())?;
    sink.write_all(&(header.len() as u32).to_le_bytes())?;
    sink.write_all(&header)?;
    written += 12 + header.len() as u64;
    let mut buf = Vec::with_capacity(model.params.len() * 8);
    for p in &model.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    sink.write_all(&buf)?;
    written += buf.len() as u64;
    Ok(written)
}

pub fn read_model<R: Read>(mut source: R) -> Result<TrainedModel> {
    let mut magic = [0u8; 4];
    source.read_exact(&mut magic)?;
    if magic != MODEL_MAGIC {
        return Err(Error::BadMagic { expected: MODEL_MAGIC, got: magic });
    }
    let mut word = [0u8; 4];
    source.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version > MODEL_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    source.read_exact(&mut word)?;
    let header_len = u32::from_le_bytes(word) as usize;
    let mut header = vec![0u8; header_len];
    source.read_exact(&mut header)?;
    let header: ModelHeader = serde_json::from_slice(&header)?;
    let n = header.spec.param_count();
    let mut buf = vec![0u8; n * 8];
    source.read_exact(&mut buf).map_err(|_| Error::Truncated { expected: n * 8, got: 0 })?;
    let params = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(TrainedModel { spec: header.spec, params, history: header.history })
}

pub fn write_model_file(model: &TrainedModel, path: impl AsRef<Path>) -> Result<u64> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n = write_model(model, &mut w)?;
    w.flush()?;
    Ok(n)
}

pub fn read_model_file(path: impl AsRef<Path>) -> Result<TrainedModel> {
    read_model(std::io::BufReader::new(std::fs::File::open(path)?))
}
