//! Threshold-based outage detection on forecasts, plus evaluation reports,
//! sensitivity sweeps, computational benchmarking, and duration statistics.
//!
//! Detection slides inference over an instance with stride 1. At each step
//! the detection statistic is the minimum of the `L_f` normalized forecast
//! values; the alarm fires at the first step whose minimum drops below the
//! threshold and is credited at the look-back end (the tick at which the
//! model runs). For outage instances the signed time difference against the
//! actual drop is negative when the alarm precedes the drop. The permit
//! oracle (the forecaster that reads the true permit one gap ahead) detects
//! every synthetic outage exactly `G` ticks early.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::dataset::{Geometry, Instance, InstanceKind, WindowSet};
use crate::error::{Error, Result};
use crate::forecast::{
    self, LossKind, ModelKind, ModelSpec, OutputHead, Runner, TrainConfig, TrainedModel,
};
use crate::frame::OutageEvent;
use crate::labels::LabelClass;

/// What produces forecasts during detection.
pub enum Forecaster<'a> {
    Model(&'a TrainedModel),
    /// Reads the true permit at the forecast start (`look-back end + G`) and
    /// repeats it over the horizon. Detection oracle for synthetic corpora.
    PermitOracle,
}

/// Applies the head transform before thresholding: `Raw` outputs are clamped
/// to `[0, 1]`, `Logits` outputs go through the logistic function.
pub fn normalize_forecast(head: OutputHead, out: &mut [f64]) {
    match head {
        OutputHead::Raw => {
            for v in out.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
        OutputHead::Logits => {
            for v in out.iter_mut() {
                *v = 1.0 / (1.0 + (-*v).exp());
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Early,
    Late,
    Missed,
}

/// Detection result for one outage instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Detection {
    pub outcome: Outcome,
    /// `detection tick - drop tick` in seconds; negative means early.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_diff_s: Option<f64>,
    /// Instance-local look-back end tick of the first alarm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detect_tick: Option<usize>,
}

/// Per-instance evaluation outcome.
#[derive(Debug, Clone)]
pub enum InstanceOutcome {
    Outage(Detection),
    NonOutage { false_positive: bool, detect_tick: Option<usize> },
}

#[derive(Debug, Clone)]
pub struct InstanceEval {
    pub outcome: InstanceOutcome,
    pub label: Option<LabelClass>,
    sq_err_sum: f64,
    n_values: usize,
}

/// Slides the forecaster over one instance and applies the detection rule.
pub fn detect_on_instance(
    forecaster: &Forecaster,
    instance: &Instance,
    geometry: Geometry,
    threshold: f64,
    target_permit: Option<&str>,
) -> Result<InstanceEval> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::config("threshold must lie strictly between 0 and 1"));
    }
    let set = WindowSet::new(vec![instance.clone()], geometry, 1, target_permit)?;
    let mut lookback = vec![0.0; geometry.lookback * set.n_readings()];
    let mut target = vec![0.0; geometry.horizon];

    let mut runner = match forecaster {
        Forecaster::Model(model) => {
            if model.spec.lookback != geometry.lookback
                || model.spec.horizon != geometry.horizon
                || model.spec.input_dim != set.n_readings()
            {
                return Err(Error::Geometry(
                    "model spec does not match detection geometry".into(),
                ));
            }
            Some(Runner::new(&model.spec)?)
        }
        Forecaster::PermitOracle => None,
    };

    let mut sq_err_sum = 0.0;
    let mut n_values = 0usize;
    let mut first_alarm: Option<usize> = None;
    let mut forecast = vec![0.0; geometry.horizon];

    for w in 0..set.len() {
        let ref_permit = set.fill(w, &mut lookback, &mut target);
        match (&mut runner, forecaster) {
            (Some(r), Forecaster::Model(model)) => {
                let out = r.run(&model.params, &lookback, ref_permit);
                forecast.copy_from_slice(out);
                normalize_forecast(model.spec.head, &mut forecast);
            }
            (None, Forecaster::PermitOracle) => {
                // the permit at forecast start is target[0]
                forecast.fill(target[0]);
            }
            _ => unreachable!(),
        }
        let min = forecast.iter().cloned().fold(f64::INFINITY, f64::min);
        for (f, t) in forecast.iter().zip(&target) {
            sq_err_sum += (f - t) * (f - t);
        }
        n_values += geometry.horizon;
        if first_alarm.is_none() && min < threshold {
            first_alarm = Some(w + geometry.lookback);
        }
    }

    let rate = instance.catalog.tick_rate_hz as f64;
    let outcome = match instance.kind {
        InstanceKind::Outage => {
            let drop = instance
                .drop_offset
                .ok_or_else(|| Error::invariant("outage instance without drop offset"))?;
            match first_alarm {
                Some(tick) => {
                    let diff_ticks = tick as i64 - drop as i64;
                    let time_diff_s = diff_ticks as f64 / rate;
                    let outcome = if time_diff_s < 0.0 { Outcome::Early } else { Outcome::Late };
                    InstanceOutcome::Outage(Detection {
                        outcome,
                        time_diff_s: Some(time_diff_s),
                        detect_tick: Some(tick),
                    })
                }
                None => InstanceOutcome::Outage(Detection {
                    outcome: Outcome::Missed,
                    time_diff_s: None,
                    detect_tick: None,
                }),
            }
        }
        InstanceKind::NonOutage => InstanceOutcome::NonOutage {
            false_positive: first_alarm.is_some(),
            detect_tick: first_alarm,
        },
    };
    Ok(InstanceEval { outcome, label: instance.label, sq_err_sum, n_values })
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ClassStats {
    pub n: usize,
    pub detected: usize,
    pub early: usize,
    pub late: usize,
    pub missed: usize,
    pub early_rate: f64,
}

/// Table-style evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionReport {
    pub version: u32,
    pub mse_test: f64,
    pub n_outages: usize,
    pub n_detected: usize,
    /// Mean over detected outages only; absent when nothing was detected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_time_diff_s: Option<f64>,
    pub n_early: usize,
    pub n_late: usize,
    pub false_negatives: usize,
    pub n_non_outages: usize,
    pub false_positives: usize,
    pub per_class: BTreeMap<String, ClassStats>,
    pub units: BTreeMap<String, String>,
}

impl DetectionReport {
    fn from_evals(evals: &[InstanceEval]) -> Self {
        let mut report = DetectionReport {
            version: 1,
            mse_test: 0.0,
            n_outages: 0,
            n_detected: 0,
            mean_time_diff_s: None,
            n_early: 0,
            n_late: 0,
            false_negatives: 0,
            n_non_outages: 0,
            false_positives: 0,
            per_class: BTreeMap::new(),
            units: BTreeMap::from([
                ("mean_time_diff_s".into(), "seconds".into()),
                ("mse_test".into(), "dimensionless".into()),
            ]),
        };
        let mut sq = 0.0;
        let mut n_vals = 0usize;
        let mut diff_sum = 0.0;
        for eval in evals {
            sq += eval.sq_err_sum;
            n_vals += eval.n_values;
            match &eval.outcome {
                InstanceOutcome::Outage(det) => {
                    report.n_outages += 1;
                    let class_entry = eval.label.map(|c| {
                        report.per_class.entry(c.name().to_string()).or_default()
                    });
                    if let Some(e) = class_entry {
                        e.n += 1;
                        match det.outcome {
                            Outcome::Early => {
                                e.detected += 1;
                                e.early += 1;
                            }
                            Outcome::Late => {
                                e.detected += 1;
                                e.late += 1;
                            }
                            Outcome::Missed => e.missed += 1,
                        }
                    }
                    match det.outcome {
                        Outcome::Early => {
                            report.n_detected += 1;
                            report.n_early += 1;
                            diff_sum += det.time_diff_s.unwrap_or(0.0);
                        }
                        Outcome::Late => {
                            report.n_detected += 1;
                            report.n_late += 1;
                            diff_sum += det.time_diff_s.unwrap_or(0.0);
                        }
                        Outcome::Missed => report.false_negatives += 1,
                    }
                }
                InstanceOutcome::NonOutage { false_positive, .. } => {
                    report.n_non_outages += 1;
                    if *false_positive {
                        report.false_positives += 1;
                    }
                }
            }
        }
        if n_vals > 0 {
            report.mse_test = sq / n_vals as f64;
        }
        if report.n_detected > 0 {
            report.mean_time_diff_s = Some(diff_sum / report.n_detected as f64);
        }
        for stats in report.per_class.values_mut() {
            if stats.n > 0 {
                stats.early_rate = stats.early as f64 / stats.n as f64;
            }
        }
        report
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }
}

/// Evaluates the forecaster over a test set; instances run in parallel and
/// the per-instance results merge in input order, so the report matches the
/// sequential path exactly.
pub fn evaluate(
    forecaster: &Forecaster,
    instances: &[Instance],
    geometry: Geometry,
    threshold: f64,
    target_permit: Option<&str>,
) -> Result<DetectionReport> {
    Ok(evaluate_detailed(forecaster, instances, geometry, threshold, target_permit)?.0)
}

pub fn evaluate_detailed(
    forecaster: &Forecaster,
    instances: &[Instance],
    geometry: Geometry,
    threshold: f64,
    target_permit: Option<&str>,
) -> Result<(DetectionReport, Vec<InstanceEval>)> {
    if instances.is_empty() {
        return Err(Error::invariant("evaluation needs at least one instance"));
    }
    #[cfg(feature = "parallel")]
    let evals: Result<Vec<InstanceEval>> = instances
        .par_iter()
        .map(|inst| detect_on_instance(forecaster, inst, geometry, threshold, target_permit))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let evals: Result<Vec<InstanceEval>> = instances
        .iter()
        .map(|inst| detect_on_instance(forecaster, inst, geometry, threshold, target_permit))
        .collect();
    let evals = evals?;
    Ok((DetectionReport::from_evals(&evals), evals))
}

/// Single-threaded reference path of [`evaluate`].
pub fn evaluate_seq(
    forecaster: &Forecaster,
    instances: &[Instance],
    geometry: Geometry,
    threshold: f64,
    target_permit: Option<&str>,
) -> Result<DetectionReport> {
    if instances.is_empty() {
        return Err(Error::invariant("evaluation needs at least one instance"));
    }
    let evals: Result<Vec<InstanceEval>> = instances
        .iter()
        .map(|inst| detect_on_instance(forecaster, inst, geometry, threshold, target_permit))
        .collect();
    Ok(DetectionReport::from_evals(&evals?))
}

/// Rolling single-tick detector; the shared computation behind offline
/// sliding detection and the streaming replay consumer, so both emit
/// identical alarms on identical data.
pub struct RollingDetector {
    params: Vec<f64>,
    head: OutputHead,
    runner: Runner,
    lookback: usize,
    n_readings: usize,
    ring: Vec<f64>,
    ordered: Vec<f64>,
    filled: usize,
    next_row: usize,
}

impl RollingDetector {
    pub fn new(model: &TrainedModel) -> Result<Self> {
        if model.spec.kind == ModelKind::Persistence {
            return Err(Error::config(
                "persistence reads the permit history and cannot run on a reading-only stream",
            ));
        }
        let runner = Runner::new(&model.spec)?;
        let lookback = model.spec.lookback;
        let n = model.spec.input_dim;
        Ok(Self {
            params: model.params.clone(),
            head: model.spec.head,
            runner,
            lookback,
            n_readings: n,
            ring: vec![0.0; lookback * n],
            ordered: vec![0.0; lookback * n],
            filled: 0,
            next_row: 0,
        })
    }

    pub fn n_readings(&self) -> usize {
        self.n_readings
    }

    /// Feeds one tick of reading values; once the look-back buffer is full,
    /// returns the detection statistic (min normalized forecast).
    pub fn push_tick(&mut self, readings: &[f64]) -> Result<Option<f64>> {
        if readings.len() != self.n_readings {
            return Err(Error::Shape(format!(
                "expected {} readings per tick, got {}",
                self.n_readings,
                readings.len()
            )));
        }
        let n = self.n_readings;
        self.ring[self.next_row * n..(self.next_row + 1) * n].copy_from_slice(readings);
        self.next_row = (self.next_row + 1) % self.lookback;
        self.filled = (self.filled + 1).min(self.lookback);
        if self.filled < self.lookback {
            return Ok(None);
        }
        // oldest row is at next_row
        for t in 0..self.lookback {
            let src = (self.next_row + t) % self.lookback;
            self.ordered[t * n..(t + 1) * n].copy_from_slice(&self.ring[src * n..(src + 1) * n]);
        }
        let out = self.runner.run(&self.params, &self.ordered, 1.0);
        let mut min = f64::INFINITY;
        match self.head {
            OutputHead::Raw => {
                for &v in out {
                    min = min.min(v.clamp(0.0, 1.0));
                }
            }
            OutputHead::Logits => {
                for &v in out {
                    min = min.min(1.0 / (1.0 + (-v).exp()));
                }
            }
        }
        Ok(Some(min))
    }
}

/// One alarm from sliding detection over contiguous data. The tick is the
/// global index of the last look-back sample at the moment the alarm fires.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub tick: u64,
    pub min_forecast: f64,
}

/// Offline sliding detection over preprocessed contiguous frames; emits one
/// alert per tick whose statistic falls below the threshold.
pub fn sliding_alerts(
    model: &TrainedModel,
    frames: &[crate::frame::HourFrame],
    threshold: f64,
) -> Result<Vec<Alert>> {
    let mut detector = RollingDetector::new(model)?;
    let mut alerts = Vec::new();
    let mut row = vec![0.0; detector.n_readings()];
    let mut global: u64 = 0;
    for frame in frames {
        let reading_cols = frame.catalog.indices_of(crate::catalog::DeviceKind::Reading);
        if reading_cols.len() != detector.n_readings() {
            return Err(Error::Shape("catalog reading count differs from model input".into()));
        }
        for t in 0..frame.n_ticks() {
            for (j, &c) in reading_cols.iter().enumerate() {
                row[j] = frame.data.get(t, c) as f64;
            }
            if let Some(min) = detector.push_tick(&row)? {
                if min < threshold {
                    alerts.push(Alert { tick: global, min_forecast: min });
                }
            }
            global += 1;
        }
    }
    Ok(alerts)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub params: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<DetectionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub version: u32,
    pub kind: String,
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum SweepKind {
    Threshold(Vec<f64>),
    Lookback(Vec<usize>),
    Gap(Vec<usize>),
    Loss(Vec<LossKind>),
}

/// Shared context for a sweep. Threshold sweeps reuse the pretrained model;
/// look-back, gap, and loss sweeps retrain per cell with the same seed.
/// With `oracle` set, cells evaluate the permit oracle and skip training.
pub struct SweepBase<'a> {
    pub model_kind: ModelKind,
    pub hidden: usize,
    pub layers: usize,
    pub geometry: Geometry,
    pub threshold: f64,
    pub train_cfg: TrainConfig,
    pub train: &'a [Instance],
    pub val: &'a [Instance],
    pub test: &'a [Instance],
    pub pretrained: Option<&'a TrainedModel>,
    pub oracle: bool,
    pub target_permit: Option<&'a str>,
}

impl<'a> SweepBase<'a> {
    fn spec_for(&self, geometry: Geometry, loss: LossKind, n_readings: usize) -> ModelSpec {
        let head = if loss == LossKind::Bcel { OutputHead::Logits } else { OutputHead::Raw };
        let mut spec = match self.model_kind {
            ModelKind::Persistence => {
                ModelSpec::persistence(n_readings, geometry.lookback, geometry.horizon)
            }
            ModelKind::Linear => {
                ModelSpec::linear(n_readings, geometry.lookback, geometry.horizon)
            }
            ModelKind::Mlp => {
                ModelSpec::mlp(n_readings, geometry.lookback, geometry.horizon, self.hidden)
            }
            ModelKind::Lstm => ModelSpec::lstm(
                n_readings,
                geometry.lookback,
                geometry.horizon,
                self.hidden,
                self.layers,
            ),
        };
        spec.head = head;
        spec
    }

    fn run_cell(
        &self,
        geometry: Geometry,
        loss: LossKind,
        threshold: f64,
        reuse: Option<&TrainedModel>,
    ) -> Result<DetectionReport> {
        if self.oracle {
            return evaluate(&Forecaster::PermitOracle, self.test, geometry, threshold, self.target_permit);
        }
        let owned;
        let model = match reuse {
            Some(m) => m,
            None => {
                let n_readings = WindowSet::new(
                    vec![self.test[0].clone()],
                    geometry,
                    1,
                    self.target_permit,
                )?
                .n_readings();
                let spec = self.spec_for(geometry, loss, n_readings);
                let train_set =
                    WindowSet::new(self.train.to_vec(), geometry, 1, self.target_permit)?;
                let val_set = WindowSet::new(self.val.to_vec(), geometry, 1, self.target_permit)?;
                let mut cfg = self.train_cfg;
                cfg.loss = loss;
                owned = forecast::train(&spec, &train_set, &val_set, &cfg)?;
                &owned
            }
        };
        evaluate(&Forecaster::Model(model), self.test, geometry, threshold, self.target_permit)
    }
}

/// Runs one report per grid cell; a failing cell is recorded and the sweep
/// continues. Cells run in parallel with the `parallel` feature.
pub fn sweep(base: &SweepBase, kind: &SweepKind) -> Result<SweepReport> {
    let (kind_name, cells): (&str, Vec<(serde_json::Value, Geometry, LossKind, f64, bool)>) =
        match kind {
            SweepKind::Threshold(grid) => {
                if grid.is_empty() {
                    return Err(Error::config("sweep grid is empty"));
                }
                (
                    "threshold",
                    grid.iter()
                        .map(|&t| {
                            (serde_json::json!({ "threshold": t }), base.geometry, base.train_cfg.loss, t, true)
                        })
                        .collect(),
                )
            }
            SweepKind::Lookback(grid) => {
                if grid.is_empty() {
                    return Err(Error::config("sweep grid is empty"));
                }
                (
                    "lookback",
                    grid.iter()
                        .map(|&lb| {
                            let g = Geometry::new(lb, base.geometry.gap, base.geometry.horizon);
                            (serde_json::json!({ "lookback": lb }), g, base.train_cfg.loss, base.threshold, false)
                        })
                        .collect(),
                )
            }
            SweepKind::Gap(grid) => {
                if grid.is_empty() {
                    return Err(Error::config("sweep grid is empty"));
                }
                (
                    "gap",
                    grid.iter()
                        .map(|&gap| {
                            let g = Geometry::new(base.geometry.lookback, gap, base.geometry.horizon);
                            (serde_json::json!({ "gap": gap }), g, base.train_cfg.loss, base.threshold, false)
                        })
                        .collect(),
                )
            }
            SweepKind::Loss(grid) => {
                if grid.is_empty() {
                    return Err(Error::config("sweep grid is empty"));
                }
                (
                    "loss",
                    grid.iter()
                        .map(|&loss| {
                            (serde_json::json!({ "loss": loss.to_string() }), base.geometry, loss, base.threshold, false)
                        })
                        .collect(),
                )
            }
        };

    let trained_for_threshold = match kind {
        SweepKind::Threshold(_) if !base.oracle => match base.pretrained {
            Some(m) => Some(m.clone()),
            None => {
                let first = cells[0].clone();
                let n_readings =
                    WindowSet::new(vec![base.test[0].clone()], first.1, 1, base.target_permit)?
                        .n_readings();
                let spec = base.spec_for(first.1, first.2, n_readings);
                let train_set =
                    WindowSet::new(base.train.to_vec(), first.1, 1, base.target_permit)?;
                let val_set = WindowSet::new(base.val.to_vec(), first.1, 1, base.target_permit)?;
                Some(forecast::train(&spec, &train_set, &val_set, &base.train_cfg)?)
            }
        },
        _ => None,
    };

    let run = |(params, geometry, loss, threshold, reuse_model): &(
        serde_json::Value,
        Geometry,
        LossKind,
        f64,
        bool,
    )| {
        let reuse = if *reuse_model { trained_for_threshold.as_ref() } else { None };
        match base.run_cell(*geometry, *loss, *threshold, reuse) {
            Ok(report) => SweepCell { params: params.clone(), report: Some(report), error: None },
            Err(err) => {
                SweepCell { params: params.clone(), report: None, error: Some(err.to_string()) }
            }
        }
    };

    #[cfg(feature = "parallel")]
    let out: Vec<SweepCell> = cells.par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let out: Vec<SweepCell> = cells.iter().map(run).collect();

    Ok(SweepReport { version: 1, kind: kind_name.to_string(), cells: out })
}

/// Table-style computational cost report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub version: u32,
    pub n_parameters: usize,
    pub model_size_bytes: u64,
    pub train_time_per_epoch_s: f64,
    pub inference_time_per_instance_s: f64,
    pub units: BTreeMap<String, String>,
}

impl BenchReport {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub repetitions: usize,
    pub warmup: usize,
    pub threshold: f64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { repetitions: 10, warmup: 3, threshold: 0.5 }
    }
}

/// Times one training epoch and one full-instance sliding inference,
/// single-threaded, reporting medians over the repetitions after the
/// warm-up runs are discarded.
pub fn bench(
    spec: &ModelSpec,
    train_windows: &WindowSet,
    val_windows: &WindowSet,
    instance: &Instance,
    train_cfg: &TrainConfig,
    opts: &BenchOptions,
) -> Result<BenchReport> {
    if opts.repetitions == 0 || opts.warmup < 3 {
        return Err(Error::config("bench needs >= 1 repetition and >= 3 warm-up runs"));
    }
    let mut one_epoch = *train_cfg;
    one_epoch.max_epochs = 1;

    let mut model = None;
    let mut train_times = Vec::new();
    for i in 0..opts.warmup + opts.repetitions {
        let start = Instant::now();
        let m = forecast::train(spec, train_windows, val_windows, &one_epoch)?;
        let dt = start.elapsed().as_secs_f64();
        if i >= opts.warmup {
            train_times.push(dt);
        }
        model = Some(m);
    }
    let model = model.unwrap();

    let geometry = Geometry::new(spec.lookback, 30.min(
        instance.ticks.n_ticks().saturating_sub(spec.lookback + spec.horizon),
    ), spec.horizon);
    let forecaster = Forecaster::Model(&model);
    let mut infer_times = Vec::new();
    for i in 0..opts.warmup + opts.repetitions {
        let start = Instant::now();
        let _ = detect_on_instance(&forecaster, instance, geometry, opts.threshold, None)?;
        let dt = start.elapsed().as_secs_f64();
        if i >= opts.warmup {
            infer_times.push(dt);
        }
    }

    let mut size_probe = Vec::new();
    let model_size_bytes = forecast::write_model(&model, &mut size_probe)?;

    Ok(BenchReport {
        version: 1,
        n_parameters: spec.param_count(),
        model_size_bytes,
        train_time_per_epoch_s: median(&mut train_times),
        inference_time_per_instance_s: median(&mut infer_times),
        units: BTreeMap::from([
            ("train_time_per_epoch_s".into(), "seconds".into()),
            ("inference_time_per_instance_s".into(), "seconds".into()),
            ("model_size_bytes".into(), "bytes".into()),
        ]),
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

/// Duration histogram bounds: 10 s to 60 min, log-spaced.
pub const STATS_MIN_S: f64 = 10.0;
pub const STATS_MAX_S: f64 = 3600.0;
pub const STATS_BINS: usize = 12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsReport {
    pub version: u32,
    pub bin_edges_s: Vec<f64>,
    pub classes: BTreeMap<String, Vec<usize>>,
    pub units: BTreeMap<String, String>,
}

impl StatsReport {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }
}

/// Per-class outage-duration histogram over log-spaced bins; durations are
/// clamped to the 60-minute cap of a single data file.
pub fn outage_stats(events: &[OutageEvent], tick_rate_hz: u32) -> StatsReport {
    let ratio = STATS_MAX_S / STATS_MIN_S;
    let edges: Vec<f64> = (0..=STATS_BINS)
        .map(|k| STATS_MIN_S * ratio.powf(k as f64 / STATS_BINS as f64))
        .collect();
    let mut classes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for event in events {
        let class = event.class.unwrap_or(LabelClass::Unlabeled).name().to_string();
        let seconds =
            (event.duration_ticks as f64 / tick_rate_hz as f64).clamp(STATS_MIN_S, STATS_MAX_S);
        let mut bin = edges[1..].iter().position(|&e| seconds < e).unwrap_or(STATS_BINS - 1);
        bin = bin.min(STATS_BINS - 1);
        classes.entry(class).or_insert_with(|| vec![0; STATS_BINS])[bin] += 1;
    }
    StatsReport {
        version: 1,
        bin_edges_s: edges,
        classes,
        units: BTreeMap::from([("bin_edges_s".into(), "seconds".into())]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{DeviceCatalog, DeviceKind, DeviceSpec};
    use crate::dataset::INSTANCE_TICKS;
    use crate::frame::TickMatrix;
    use std::sync::Arc;

    fn catalog() -> Arc<DeviceCatalog> {
        Arc::new(DeviceCatalog {
            devices: vec![
                DeviceSpec::new("r0", DeviceKind::Reading),
                DeviceSpec::new("r1", DeviceKind::Reading),
                DeviceSpec::new("bp", DeviceKind::Permit),
            ],
            tick_rate_hz: 15,
        })
    }

    fn outage_instance(c: &Arc<DeviceCatalog>, label: Option<LabelClass>) -> Instance {
        let mut data = TickMatrix::zeros(INSTANCE_TICKS, c.len());
        for d in 0..2 {
            for t in 0..INSTANCE_TICKS {
                data.set(t, d, ((t + d) % 7) as f32 * 0.1);
            }
        }
        let p = data.column_mut(2);
        p.fill(1.0);
        p[450..].fill(0.0);
        Instance {
            kind: InstanceKind::Outage,
            catalog: Arc::clone(c),
            ticks: data,
            drop_offset: Some(450),
            source_file: "t".into(),
            global_start_tick: 0,
            label,
        }
    }

    fn non_outage_instance(c: &Arc<DeviceCatalog>) -> Instance {
        let mut inst = outage_instance(c, None);
        inst.kind = InstanceKind::NonOutage;
        inst.drop_offset = None;
        inst.ticks.column_mut(2).fill(1.0);
        inst.global_start_tick = 99_000;
        inst
    }

    fn constant_model(c: f64) -> TrainedModel {
        // linear model with zero weights and bias c
        let spec = ModelSpec::linear(2, 30, 60);
        let mut model = TrainedModel::zeros(spec);
        let n = model.params.len();
        for v in &mut model.params[n - 60..] {
            *v = c;
        }
        model
    }

    #[test]
    fn oracle_detects_exactly_gap_ticks_early() {
        let c = catalog();
        let inst = outage_instance(&c, None);
        for (gap, want_s) in [(0usize, 0.0), (30, -2.0), (60, -4.0)] {
            let g = Geometry::new(30, gap, 60);
            let eval =
                detect_on_instance(&Forecaster::PermitOracle, &inst, g, 0.5, None).unwrap();
            match eval.outcome {
                InstanceOutcome::Outage(det) => {
                    assert_eq!(det.time_diff_s, Some(want_s), "gap {gap}");
                    assert_eq!(det.detect_tick, Some(450 - gap));
                }
                _ => panic!("expected outage outcome"),
            }
        }
    }

    #[test]
    fn constant_one_never_fires_and_constant_zero_fires_first_window() {
        let c = catalog();
        let non = non_outage_instance(&c);
        let g = Geometry::new(30, 30, 60);
        let one = constant_model(1.0);
        let eval =
            detect_on_instance(&Forecaster::Model(&one), &non, g, 0.5, None).unwrap();
        match eval.outcome {
            InstanceOutcome::NonOutage { false_positive, .. } => assert!(!false_positive),
            _ => panic!(),
        }

        let zero = constant_model(0.0);
        let out = outage_instance(&c, None);
        let eval =
            detect_on_instance(&Forecaster::Model(&zero), &out, g, 0.5, None).unwrap();
        match eval.outcome {
            InstanceOutcome::Outage(det) => {
                assert_eq!(det.outcome, Outcome::Early);
                assert_eq!(det.detect_tick, Some(30));
            }
            _ => panic!(),
        }
        let eval =
            detect_on_instance(&Forecaster::Model(&zero), &non, g, 0.5, None).unwrap();
        match eval.outcome {
            InstanceOutcome::NonOutage { false_positive, detect_tick } => {
                assert!(false_positive);
                assert_eq!(detect_tick, Some(30));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn report_counters_satisfy_the_algebra() {
        let c = catalog();
        let instances = vec![
            outage_instance(&c, Some(LabelClass::KRF1)),
            outage_instance(&c, Some(LabelClass::LRF)),
            non_outage_instance(&c),
        ];
        let g = Geometry::new(30, 30, 60);
        let report =
            evaluate(&Forecaster::PermitOracle, &instances, g, 0.5, None).unwrap();
        assert_eq!(report.n_outages, 2);
        assert_eq!(report.n_detected, report.n_early + report.n_late);
        assert_eq!(report.n_outages, report.n_detected + report.false_negatives);
        assert!(report.false_positives <= report.n_non_outages);
        assert_eq!(report.mean_time_diff_s, Some(-2.0));
        assert_eq!(report.per_class["KRF1"].early, 1);
        assert_eq!(report.per_class["LRF"].early_rate, 1.0);
        // parallel and sequential evaluation agree exactly
        let seq = evaluate_seq(&Forecaster::PermitOracle, &instances, g, 0.5, None).unwrap();
        assert_eq!(serde_json::to_string(&report).unwrap(), serde_json::to_string(&seq).unwrap());
    }

    #[test]
    fn empty_outage_set_reports_only_non_outages() {
        let c = catalog();
        let instances: Vec<Instance> = (0..5).map(|_| non_outage_instance(&c)).collect();
        let g = Geometry::new(30, 30, 60);
        let one = constant_model(1.0);
        let report = evaluate(&Forecaster::Model(&one), &instances, g, 0.5, None).unwrap();
        assert_eq!(report.n_outages, 0);
        assert_eq!(report.n_detected, 0);
        assert_eq!(report.false_positives, 0);
        assert_eq!(report.n_non_outages, 5);
        assert_eq!(report.mean_time_diff_s, None);
    }

    #[test]
    fn threshold_monotonicity_is_exact() {
        let c = catalog();
        let instances = vec![
            outage_instance(&c, None),
            outage_instance(&c, None),
            non_outage_instance(&c),
            non_outage_instance(&c),
        ];
        let g = Geometry::new(30, 30, 60);
        // random fixed model
        let model = TrainedModel::init(ModelSpec::linear(2, 30, 60), 5).unwrap();
        let mut last_detected = 0;
        let mut last_fp = 0;
        for k in 1..=9 {
            let threshold = k as f64 * 0.1;
            let report =
                evaluate(&Forecaster::Model(&model), &instances, g, threshold, None).unwrap();
            assert!(report.n_detected >= last_detected);
            assert!(report.false_positives >= last_fp);
            last_detected = report.n_detected;
            last_fp = report.false_positives;
        }
    }

    #[test]
    fn table_row_schema_golden_example() {
        let report = DetectionReport {
            version: 1,
            mse_test: 0.21,
            n_outages: 80,
            n_detected: 80,
            mean_time_diff_s: Some(-11.16),
            n_early: 75,
            n_late: 5,
            false_negatives: 0,
            n_non_outages: 31,
            false_positives: 9,
            per_class: BTreeMap::new(),
            units: BTreeMap::from([("mean_time_diff_s".into(), "seconds".into())]),
        };
        let json: serde_json::Value =
            serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
        for key in [
            "version",
            "mse_test",
            "n_outages",
            "n_detected",
            "mean_time_diff_s",
            "n_early",
            "n_late",
            "false_negatives",
            "n_non_outages",
            "false_positives",
            "per_class",
            "units",
        ] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
        assert_eq!(json["version"], 1);
        assert_eq!(json["n_detected"], 80);
    }

    #[test]
    fn gap_sweep_with_oracle_matches_geometry() {
        let c = catalog();
        let instances = vec![outage_instance(&c, None), outage_instance(&c, None)];
        let base = SweepBase {
            model_kind: ModelKind::Linear,
            hidden: 0,
            layers: 0,
            geometry: Geometry::new(30, 30, 60),
            threshold: 0.5,
            train_cfg: TrainConfig::default(),
            train: &instances,
            val: &instances,
            test: &instances,
            pretrained: None,
            oracle: true,
            target_permit: None,
        };
        let report = sweep(&base, &SweepKind::Gap(vec![0, 30, 60])).unwrap();
        let diffs: Vec<f64> = report
            .cells
            .iter()
            .map(|c| c.report.as_ref().unwrap().mean_time_diff_s.unwrap())
            .collect();
        assert_eq!(diffs, vec![0.0, -2.0, -4.0]);
    }

    #[test]
    fn failing_cell_is_recorded_and_sweep_continues() {
        let c = catalog();
        let mut poisoned = outage_instance(&c, None);
        poisoned.ticks.set(0, 0, f32::NAN);
        let train = vec![poisoned];
        let test = vec![outage_instance(&c, None)];
        let base = SweepBase {
            model_kind: ModelKind::Linear,
            hidden: 0,
            layers: 0,
            geometry: Geometry::new(30, 30, 60),
            threshold: 0.5,
            train_cfg: TrainConfig { max_epochs: 2, seed: 1, ..TrainConfig::default() },
            train: &train,
            val: &test,
            test: &test,
            pretrained: None,
            oracle: false,
            target_permit: None,
        };
        let report = sweep(&base, &SweepKind::Gap(vec![0, 30])).unwrap();
        assert_eq!(report.cells.len(), 2);
        assert!(report.cells.iter().all(|c| c.error.is_some()));
        assert!(report.cells.iter().all(|c| c.report.is_none()));
    }

    #[test]
    fn loss_sweep_produces_distinct_cells() {
        let c = catalog();
        let train: Vec<Instance> = (0..2).map(|_| outage_instance(&c, None)).collect();
        let test = vec![outage_instance(&c, None)];
        let base = SweepBase {
            model_kind: ModelKind::Linear,
            hidden: 0,
            layers: 0,
            geometry: Geometry::new(30, 30, 60),
            threshold: 0.5,
            train_cfg: TrainConfig { max_epochs: 3, patience: 5, seed: 4, ..TrainConfig::default() },
            train: &train,
            val: &test,
            test: &test,
            pretrained: None,
            oracle: false,
            target_permit: None,
        };
        let report = sweep(
            &base,
            &SweepKind::Loss(vec![LossKind::Mse, LossKind::Mae, LossKind::Bcel]),
        )
        .unwrap();
        assert_eq!(report.cells.len(), 3);
        assert!(report.cells.iter().all(|c| c.report.is_some()));
        let kinds: Vec<String> =
            report.cells.iter().map(|c| c.params["loss"].as_str().unwrap().into()).collect();
        assert_eq!(kinds, vec!["mse", "mae", "bcel"]);
    }

    #[test]
    fn bench_reports_parameter_counts_and_positive_times() {
        let c = catalog();
        let train: Vec<Instance> = (0..1).map(|_| outage_instance(&c, None)).collect();
        let g = Geometry::new(30, 30, 60);
        let train_set = WindowSet::new(train.clone(), g, 8, None).unwrap();
        let instance = outage_instance(&c, None);
        let spec = ModelSpec::linear(2, 30, 60);
        let cfg = TrainConfig { seed: 1, ..TrainConfig::default() };
        let opts = BenchOptions { repetitions: 3, warmup: 3, threshold: 0.5 };
        let report = bench(&spec, &train_set, &train_set, &instance, &cfg, &opts).unwrap();
        assert_eq!(report.n_parameters, 2 * 30 * 60 + 60);
        assert!(report.inference_time_per_instance_s > 0.0);
        assert!(report.inference_time_per_instance_s.is_finite());
        assert!(report.train_time_per_epoch_s > 0.0);

        let pers = ModelSpec::persistence(2, 30, 60);
        assert_eq!(pers.param_count(), 0);
        assert_eq!(ModelSpec::lstm(1719, 30, 60, 25, 2).param_count(), 181_360);
    }

    #[test]
    fn outage_stats_bins_and_clamps() {
        let empty = outage_stats(&[], 15);
        assert!(empty.classes.is_empty());

        let mk = |secs: f64, class: Option<LabelClass>| OutageEvent {
            start_tick: 0,
            duration_ticks: (secs * 15.0) as u64,
            raw_label: None,
            class,
            confidence: None,
        };
        let stats = outage_stats(
            &[
                mk(30.0, Some(LabelClass::KRF1)),
                mk(45.0, Some(LabelClass::KRF1)),
                mk(61.0 * 60.0, Some(LabelClass::LRF)),
            ],
            15,
        );
        assert_eq!(stats.classes["KRF1"].iter().sum::<usize>(), 2);
        // the 61-minute event lands in the last (60-minute) bin
        let lrf = &stats.classes["LRF"];
        assert_eq!(lrf[STATS_BINS - 1], 1);
        assert_eq!(lrf.iter().sum::<usize>(), 1);
        assert_eq!(stats.bin_edges_s.len(), STATS_BINS + 1);
    }

    #[test]
    fn rolling_detector_matches_instance_detection_convention() {
        let c = catalog();
        let inst = outage_instance(&c, None);
        let model = TrainedModel::init(ModelSpec::linear(2, 30, 60), 9).unwrap();
        // feed instance rows through the rolling detector
        let mut det = RollingDetector::new(&model).unwrap();
        let mut mins = Vec::new();
        let mut row = vec![0.0; 2];
        for t in 0..inst.ticks.n_ticks() {
            row[0] = inst.ticks.get(t, 0) as f64;
            row[1] = inst.ticks.get(t, 1) as f64;
            if let Some(min) = det.push_tick(&row).unwrap() {
                mins.push((t, min));
            }
        }
        assert_eq!(mins.len(), inst.ticks.n_ticks() - 30 + 1);
        // spot-check one window against the WindowSet path
        let g = Geometry::new(30, 30, 60);
        let set = WindowSet::new(vec![inst], g, 1, None).unwrap();
        let mut lb = vec![0.0; 60];
        let mut tg = vec![0.0; 60];
        set.fill(0, &mut lb, &mut tg);
        let mut runner = Runner::new(&model.spec).unwrap();
        let out = runner.run(&model.params, &lb, 1.0);
        let mut expect = out.to_vec();
        normalize_forecast(OutputHead::Raw, &mut expect);
        let want = expect.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(mins[0], (29, want));
    }
}
