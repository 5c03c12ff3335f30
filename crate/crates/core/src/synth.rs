//! Synthetic telemetry corpora with permit interlock logic and injected
//! outage classes.
//!
//! Baseline dynamics per reading are a device constant plus a slow sinusoid
//! plus AR(1) noise; settings are flat; status devices hold a small constant
//! bit pattern. Scheduled outages apply their template's precursor to the
//! affected readings over the lead window, drop the permit columns to zero
//! for the sampled duration, and OR the template's bit signature into the
//! status devices for the whole permit-down span. Fluctuations drop the
//! permit for 1-149 ticks with no precursor and no bit signature.
//!
//! Every hour derives an independent RNG stream from `(seed, hour index)`,
//! so parallel and serial generation emit byte-identical files.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;
use std::sync::Arc;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::catalog::{DeviceCatalog, DeviceKind, DeviceSpec};
use crate::error::{Error, Result};
use crate::format;
use crate::frame::{HourFrame, TickMatrix};
use crate::labels::LabelClass;
use crate::rng::{self, tag};

/// Ticks in one hour file at 15 Hz.
pub const HOUR_TICKS: usize = 15 * 3600;
/// Minimum duration for an injected outage; shorter drops are fluctuations.
pub const MIN_OUTAGE_TICKS: usize = 150;
/// Status-bit signatures must appear within this many ticks of the drop.
pub const SIGNATURE_WINDOW_TICKS: usize = 30;

/// Margin kept clear before a drop so the pre-drop window (look-back plus
/// precursor lead) never overlaps a neighboring event.
const PAD_BEFORE: usize = 700;
/// Margin kept clear after an event ends.
const PAD_AFTER: usize = 160;
const PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecursorShape {
    /// Linear ramp reaching the full amplitude at the tick before the drop.
    Ramp,
    /// Oscillation whose envelope grows to the full amplitude.
    OscillationGrowth,
    /// Constant offset with extra per-tick noise.
    StepNoise,
}

/// One injectable fault class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaultTemplate {
    pub class: LabelClass,
    /// Ticks of precursor before the drop; 0 means abrupt.
    pub precursor_lead_ticks: u32,
    /// Indices among the reading devices the precursor is applied to.
    pub affected_readings: Vec<usize>,
    pub precursor_shape: PrecursorShape,
    /// Raw-unit amplitude of the precursor disturbance.
    pub precursor_amplitude: f64,
    /// Status-device ordinal -> bitmask ORed in while the permit is down.
    pub bit_signature: BTreeMap<usize, u32>,
    pub min_duration_ticks: u32,
    pub max_duration_ticks: u32,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// AR(1) coefficient of the reading noise.
    pub ar_coeff: f64,
    /// Stationary standard deviation of the reading noise.
    pub amplitude: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { ar_coeff: 0.95, amplitude: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_reading: usize,
    pub n_setting: usize,
    pub n_status: usize,
    pub hours: usize,
    pub outage_rate_per_hour: f64,
    pub fluctuation_rate_per_hour: f64,
    /// Trailing hours kept free of events; guarantees non-outage files.
    #[serde(default)]
    pub quiet_tail_hours: usize,
    pub templates: Vec<FaultTemplate>,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hours == 0 {
            return Err(Error::config("hours must be >= 1"));
        }
        if self.quiet_tail_hours >= self.hours && self.total_events() > 0 {
            return Err(Error::config("quiet_tail_hours leaves no hours for events"));
        }
        if self.outage_rate_per_hour < 0.0 || self.fluctuation_rate_per_hour < 0.0 {
            return Err(Error::config("rates must be >= 0"));
        }
        if self.n_outages() > 0 && self.templates.is_empty() {
            return Err(Error::config("outage rate > 0 requires at least one template"));
        }
        let mut class_sigs: BTreeMap<LabelClass, &BTreeMap<usize, u32>> = BTreeMap::new();
        for t in &self.templates {
            if t.min_duration_ticks < MIN_OUTAGE_TICKS as u32 {
                return Err(Error::config(format!(
                    "template {} min duration {} is below the {MIN_OUTAGE_TICKS}-tick outage rule",
                    t.class, t.min_duration_ticks
                )));
            }
            if t.min_duration_ticks > t.max_duration_ticks {
                return Err(Error::config("template min duration exceeds max"));
            }
            if t.max_duration_ticks as usize + PAD_BEFORE + PAD_AFTER >= HOUR_TICKS {
                return Err(Error::config("template max duration does not fit in an hour"));
            }
            if t.affected_readings.iter().any(|&r| r >= self.n_reading) {
                return Err(Error::config("affected reading index out of range"));
            }
            if t.bit_signature.keys().any(|&s| s >= self.n_status) {
                return Err(Error::config("bit signature device index out of range"));
            }
            if t.bit_signature.values().any(|&m| m == 0 || m >= (1 << 24)) {
                return Err(Error::config("bit signature masks must be nonzero and < 2^24"));
            }
            match class_sigs.get(&t.class) {
                Some(existing) if **existing != t.bit_signature => {
                    return Err(Error::config(format!(
                        "class {} has conflicting bit signatures across templates",
                        t.class
                    )));
                }
                Some(_) => {}
                None => {
                    class_sigs.insert(t.class, &t.bit_signature);
                }
            }
        }
        let sigs: Vec<_> = class_sigs.values().collect();
        for i in 0..sigs.len() {
            for j in i + 1..sigs.len() {
                if sigs[i] == sigs[j] {
                    return Err(Error::config("bit signatures must be distinct across classes"));
                }
            }
        }
        Ok(())
    }

    pub fn n_devices(&self) -> usize {
        self.n_reading + self.n_setting + self.n_status + 2
    }

    pub fn n_outages(&self) -> usize {
        (self.outage_rate_per_hour * self.hours as f64).round() as usize
    }

    pub fn n_fluctuations(&self) -> usize {
        (self.fluctuation_rate_per_hour * self.hours as f64).round() as usize
    }

    fn total_events(&self) -> usize {
        self.n_outages() + self.n_fluctuations()
    }

    /// Canonical catalog: readings, settings, status devices, then the two
    /// permit columns (upstream first, the default prediction target).
    pub fn catalog(&self) -> Arc<DeviceCatalog> {
        let mut devices = Vec::with_capacity(self.n_devices());
        for i in 0..self.n_reading {
            devices.push(DeviceSpec::new(format!("read_{i:03}"), DeviceKind::Reading));
        }
        for i in 0..self.n_setting {
            devices.push(DeviceSpec::new(format!("set_{i:03}"), DeviceKind::Setting));
        }
        for i in 0..self.n_status {
            devices.push(DeviceSpec::new(format!("stat_{i:03}"), DeviceKind::StatusBits));
        }
        devices.push(DeviceSpec::new("permit_up", DeviceKind::Permit));
        devices.push(DeviceSpec::new("permit_down", DeviceKind::Permit));
        Arc::new(DeviceCatalog { devices, tick_rate_hz: 15 })
    }
}

/// A template set covering all five classes: six precursor-bearing templates
/// and two abrupt ones, so 75% of round-robin scheduled outages carry a
/// 2-4 s precursor. Bit signatures are one high bit per class, clear of the
/// low bits used by the constant status baseline.
pub fn default_templates(n_reading: usize, n_status: usize) -> Vec<FaultTemplate> {
    let classes = LabelClass::NAMED;
    let class_sig = |j: usize| -> BTreeMap<usize, u32> {
        let mut m = BTreeMap::new();
        m.insert(j % n_status, 1u32 << (4 + j));
        m
    };
    let affected = |j: usize| -> Vec<usize> {
        (0..3).map(|k| (3 * j + k) % n_reading).collect()
    };
    let shapes = [
        PrecursorShape::Ramp,
        PrecursorShape::OscillationGrowth,
        PrecursorShape::StepNoise,
    ];
    let leads = [45u32, 30, 60, 36, 54, 45];
    let mut templates = Vec::new();
    for (i, lead) in leads.iter().enumerate() {
        let j = i % classes.len();
        templates.push(FaultTemplate {
            class: classes[j],
            precursor_lead_ticks: *lead,
            affected_readings: affected(j),
            precursor_shape: shapes[i % shapes.len()],
            precursor_amplitude: 2.0,
            bit_signature: class_sig(j),
            min_duration_ticks: 150,
            max_duration_ticks: 900,
        });
    }
    for j in [0usize, 3] {
        templates.push(FaultTemplate {
            class: classes[j],
            precursor_lead_ticks: 0,
            affected_readings: Vec::new(),
            precursor_shape: PrecursorShape::Ramp,
            precursor_amplitude: 0.0,
            bit_signature: class_sig(j),
            min_duration_ticks: 150,
            max_duration_ticks: 900,
        });
    }
    templates
}

/// A ground-truth event; fluctuations carry `class: None`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthEvent {
    pub start_tick: u64,
    pub duration_ticks: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<LabelClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_label: Option<String>,
    pub precursor_lead_ticks: u32,
    /// Catalog indices of the readings the precursor touched.
    pub affected_devices: Vec<usize>,
}

impl TruthEvent {
    pub fn is_outage(&self) -> bool {
        self.duration_ticks >= MIN_OUTAGE_TICKS as u64
    }
}

/// Sidecar ground truth; events are sorted by start tick and non-overlapping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub version: u32,
    pub events: Vec<TruthEvent>,
}

impl GroundTruth {
    pub fn outages(&self) -> impl Iterator<Item = &TruthEvent> {
        self.events.iter().filter(|e| e.is_outage())
    }

    pub fn fluctuations(&self) -> impl Iterator<Item = &TruthEvent> {
        self.events.iter().filter(|e| !e.is_outage())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

#[derive(Debug, Clone)]
struct ScheduledEvent {
    hour: usize,
    drop_local: usize,
    duration: usize,
    /// Outages carry their template index; fluctuations carry `None`.
    template: Option<usize>,
    /// Index into the per-event RNG stream space.
    event_index: u64,
}

#[derive(Debug, Clone)]
enum Baseline {
    Reading { level: f64, amp: f64, period: f64, phase: f64 },
    Setting { level: f64 },
    Status { base: u32 },
    Permit,
}

fn device_baselines(cfg: &SynthConfig, catalog: &DeviceCatalog) -> Vec<Baseline> {
    catalog
        .devices
        .iter()
        .enumerate()
        .map(|(d, spec)| {
            let mut r = rng::stream(cfg.seed, tag::DEVICE, d as u64);
            match spec.kind {
                DeviceKind::Reading => Baseline::Reading {
                    level: r.random::<f64>() * 4.0 - 2.0,
                    amp: 0.5 + r.random::<f64>(),
                    period: 3_000.0 + r.random::<f64>() * 27_000.0,
                    phase: r.random::<f64>() * TAU,
                },
                DeviceKind::Setting => Baseline::Setting { level: r.random::<f64>() * 6.0 - 3.0 },
                DeviceKind::StatusBits => Baseline::Status { base: r.random::<u32>() & 0xF },
                DeviceKind::Permit => Baseline::Permit,
            }
        })
        .collect()
}

fn schedule_events(cfg: &SynthConfig) -> Result<Vec<ScheduledEvent>> {
    let busy_hours = cfg.hours - cfg.quiet_tail_hours.min(cfg.hours.saturating_sub(1));
    let mut rng = rng::stream(cfg.seed, tag::SCHEDULE, 0);
    let mut accepted: Vec<(u64, u64)> = Vec::new(); // padded global intervals
    let mut events = Vec::new();

    let mut place = |rng: &mut ChaCha8Rng,
                     duration: usize,
                     min_local: usize|
     -> Result<(usize, usize)> {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let hour = rng.random_range(0..busy_hours);
            let lo = if hour == 0 { min_local.max(PAD_BEFORE) } else { min_local };
            let hi = HOUR_TICKS - duration;
            if lo >= hi {
                continue;
            }
            let local = rng.random_range(lo..hi);
            let global = (hour * HOUR_TICKS + local) as u64;
            let pad_lo = global.saturating_sub(PAD_BEFORE as u64);
            let pad_hi = global + (duration + PAD_AFTER) as u64;
            if accepted.iter().all(|&(a, b)| pad_hi <= a || pad_lo >= b) {
                accepted.push((pad_lo, pad_hi));
                return Ok((hour, local));
            }
        }
        Err(Error::config("event density infeasible: could not place event without overlap"))
    };

    for i in 0..cfg.n_outages() {
        let t_idx = i % cfg.templates.len();
        let template = &cfg.templates[t_idx];
        // The event stream's first draw is the duration; inject_outage makes
        // the same draw from the same stream.
        let mut event_rng = rng::stream(cfg.seed, tag::EVENT, i as u64);
        let duration = event_rng
            .random_range(template.min_duration_ticks..=template.max_duration_ticks)
            as usize;
        let min_local = template.precursor_lead_ticks as usize;
        let (hour, drop_local) = place(&mut rng, duration, min_local)?;
        events.push(ScheduledEvent {
            hour,
            drop_local,
            duration,
            template: Some(t_idx),
            event_index: i as u64,
        });
    }
    let n_out = cfg.n_outages();
    for j in 0..cfg.n_fluctuations() {
        let duration = rng.random_range(1..MIN_OUTAGE_TICKS);
        let (hour, drop_local) = place(&mut rng, duration, 0)?;
        events.push(ScheduledEvent {
            hour,
            drop_local,
            duration,
            template: None,
            event_index: (n_out + j) as u64,
        });
    }
    events.sort_by_key(|e| e.hour * HOUR_TICKS + e.drop_local);
    Ok(events)
}

fn truth_from_schedule(cfg: &SynthConfig, events: &[ScheduledEvent]) -> GroundTruth {
    let n_reading = cfg.n_reading;
    let mut label_rng = rng::stream(cfg.seed, tag::SCHEDULE, 1);
    let truth_events = events
        .iter()
        .map(|e| {
            let start_tick = (e.hour * HOUR_TICKS + e.drop_local) as u64;
            match e.template {
                Some(t_idx) => {
                    let t = &cfg.templates[t_idx];
                    let raws = t.class.raw_labels();
                    let raw = raws[label_rng.random_range(0..raws.len())].to_string();
                    TruthEvent {
                        start_tick,
                        duration_ticks: e.duration as u64,
                        class: Some(t.class),
                        raw_label: Some(raw),
                        precursor_lead_ticks: t.precursor_lead_ticks,
                        // reading ordinals coincide with catalog indices
                        affected_devices: t
                            .affected_readings
                            .iter()
                            .map(|&r| r.min(n_reading - 1))
                            .collect(),
                    }
                }
                None => TruthEvent {
                    start_tick,
                    duration_ticks: e.duration as u64,
                    class: None,
                    raw_label: None,
                    precursor_lead_ticks: 0,
                    affected_devices: Vec::new(),
                },
            }
        })
        .collect();
    GroundTruth { version: 1, events: truth_events }
}

/// Epoch seconds of hour 0; arbitrary but frozen so corpora are reproducible.
pub const CORPUS_EPOCH: u64 = 1_700_000_000;

fn generate_hour(
    cfg: &SynthConfig,
    catalog: &Arc<DeviceCatalog>,
    baselines: &[Baseline],
    hour: usize,
    events: &[ScheduledEvent],
) -> Result<HourFrame> {
    let mut data = TickMatrix::zeros(HOUR_TICKS, catalog.len());
    let mut hour_rng = rng::stream(cfg.seed, tag::HOUR, hour as u64);
    let inn = cfg.noise.amplitude * (1.0 - cfg.noise.ar_coeff * cfg.noise.ar_coeff).sqrt();
    let global_base = (hour * HOUR_TICKS) as f64;

    for (d, baseline) in baselines.iter().enumerate() {
        let col = data.column_mut(d);
        match baseline {
            Baseline::Reading { level, amp, period, phase } => {
                let mut noise: f64 =
                    cfg.noise.amplitude * hour_rng.sample::<f64, _>(StandardNormal);
                for (t, v) in col.iter_mut().enumerate() {
                    let eps: f64 = hour_rng.sample(StandardNormal);
                    noise = cfg.noise.ar_coeff * noise + inn * eps;
                    let g = global_base + t as f64;
                    *v = (level + amp * (TAU * g / period + phase).sin() + noise) as f32;
                }
            }
            Baseline::Setting { level } => col.fill(*level as f32),
            Baseline::Status { base } => col.fill(*base as f32),
            Baseline::Permit => col.fill(1.0),
        }
    }

    let mut frame = HourFrame::new(Arc::clone(catalog), CORPUS_EPOCH + 3600 * hour as u64, data);
    for event in events.iter().filter(|e| e.hour == hour) {
        match event.template {
            Some(t_idx) => {
                let mut event_rng = rng::stream(cfg.seed, tag::EVENT, event.event_index);
                inject_outage_mut(
                    &mut frame,
                    &cfg.templates[t_idx],
                    event.drop_local,
                    &mut event_rng,
                )?;
            }
            None => {
                drop_permits(&mut frame, event.drop_local, event.duration)?;
            }
        }
    }
    Ok(frame)
}

fn drop_permits(frame: &mut HourFrame, drop_tick: usize, duration: usize) -> Result<()> {
    if drop_tick + duration > frame.n_ticks() {
        return Err(Error::Geometry(format!(
            "drop at {drop_tick} for {duration} ticks exceeds frame of {} ticks",
            frame.n_ticks()
        )));
    }
    for p in frame.catalog.indices_of(DeviceKind::Permit) {
        frame.data.column_mut(p)[drop_tick..drop_tick + duration].fill(0.0);
    }
    Ok(())
}

/// Applies one outage template at `drop_tick`. The first draw from `rng` is
/// the duration in `[min, max]`; subsequent draws feed the precursor noise.
/// Pre-drop readings outside the lead window are untouched.
pub fn inject_outage(
    frame: &HourFrame,
    template: &FaultTemplate,
    drop_tick: usize,
    rng: &mut ChaCha8Rng,
) -> Result<HourFrame> {
    let mut out = frame.clone();
    inject_outage_mut(&mut out, template, drop_tick, rng)?;
    Ok(out)
}

fn inject_outage_mut(
    frame: &mut HourFrame,
    template: &FaultTemplate,
    drop_tick: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let duration =
        rng.random_range(template.min_duration_ticks..=template.max_duration_ticks) as usize;
    let lead = template.precursor_lead_ticks as usize;
    if drop_tick < lead || drop_tick + duration > frame.n_ticks() {
        return Err(Error::Geometry(format!(
            "drop tick {drop_tick} with lead {lead} and duration {duration} out of range for {} ticks",
            frame.n_ticks()
        )));
    }

    for k in 0..lead {
        let t = drop_tick - lead + k;
        let progress = (k + 1) as f64 / lead as f64;
        for &r in &template.affected_readings {
            let a = template.precursor_amplitude;
            let delta = match template.precursor_shape {
                PrecursorShape::Ramp => a * progress,
                PrecursorShape::OscillationGrowth => {
                    a * progress * (TAU * k as f64 / 12.0).sin()
                }
                PrecursorShape::StepNoise => {
                    let eps: f64 = rng.sample(StandardNormal);
                    a + 0.3 * a * eps
                }
            };
            let v = frame.data.get(t, r);
            frame.data.set(t, r, (v as f64 + delta) as f32);
        }
    }

    drop_permits(frame, drop_tick, duration)?;

    let status_base = frame
        .catalog
        .devices
        .iter()
        .position(|d| d.kind == DeviceKind::StatusBits);
    if let Some(base) = status_base {
        for (&ordinal, &mask) in &template.bit_signature {
            let col = frame.data.column_mut(base + ordinal);
            for v in &mut col[drop_tick..drop_tick + duration] {
                let bits = *v as u32;
                *v = (bits | mask) as f32;
            }
        }
    } else if !template.bit_signature.is_empty() {
        return Err(Error::invariant("template has a bit signature but catalog has no status devices"));
    }
    Ok(())
}

/// Generates the corpus in memory. Deterministic given the seed; the
/// parallel and sequential paths are bit-identical.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<(Vec<HourFrame>, GroundTruth)> {
    let (catalog, baselines, events) = prepare(cfg)?;
    let truth = truth_from_schedule(cfg, &events);
    let frames = run_hours(cfg, &catalog, &baselines, &events, |frame| Ok(frame))?;
    Ok((frames, truth))
}

/// Single-threaded reference path of [`generate_corpus`].
pub fn generate_corpus_seq(cfg: &SynthConfig) -> Result<(Vec<HourFrame>, GroundTruth)> {
    let (catalog, baselines, events) = prepare(cfg)?;
    let truth = truth_from_schedule(cfg, &events);
    let frames: Vec<HourFrame> = (0..cfg.hours)
        .map(|h| generate_hour(cfg, &catalog, &baselines, h, &events))
        .collect::<Result<_>>()?;
    Ok((frames, truth))
}

/// Generates the corpus directly into `dir` as `hour_%05d.fhf` files plus a
/// `truth.json` sidecar; hours are written from their generating task so
/// memory stays bounded by the number of worker threads.
pub fn generate_corpus_to_dir(cfg: &SynthConfig, dir: impl AsRef<Path>) -> Result<GroundTruth> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let (catalog, baselines, events) = prepare(cfg)?;
    let truth = truth_from_schedule(cfg, &events);
    run_hours(cfg, &catalog, &baselines, &events, |frame| {
        let hour = ((frame.start_time - CORPUS_EPOCH) / 3600) as usize;
        format::write_hour_frame_file(&frame, dir.join(hour_file_name(hour)))?;
        Ok(())
    })?;
    truth.save(dir.join("truth.json"))?;
    Ok(truth)
}

pub fn hour_file_name(hour: usize) -> String {
    format!("hour_{hour:05}.fhf")
}

type Prepared = (Arc<DeviceCatalog>, Vec<Baseline>, Vec<ScheduledEvent>);

fn prepare(cfg: &SynthConfig) -> Result<Prepared> {
    cfg.validate()?;
    let catalog = cfg.catalog();
    let baselines = device_baselines(cfg, &catalog);
    let events = schedule_events(cfg)?;
    Ok((catalog, baselines, events))
}

#[cfg(feature = "parallel")]
fn run_hours<T: Send>(
    cfg: &SynthConfig,
    catalog: &Arc<DeviceCatalog>,
    baselines: &[Baseline],
    events: &[ScheduledEvent],
    sink: impl Fn(HourFrame) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    (0..cfg.hours)
        .into_par_iter()
        .map(|h| generate_hour(cfg, catalog, baselines, h, events).and_then(&sink))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn run_hours<T: Send>(
    cfg: &SynthConfig,
    catalog: &Arc<DeviceCatalog>,
    baselines: &[Baseline],
    events: &[ScheduledEvent],
    sink: impl Fn(HourFrame) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    (0..cfg.hours)
        .map(|h| generate_hour(cfg, catalog, baselines, h, events).and_then(&sink))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config(hours: usize, outages: f64, fluctuations: f64) -> SynthConfig {
        SynthConfig {
            n_reading: 4,
            n_setting: 2,
            n_status: 2,
            hours,
            outage_rate_per_hour: outages,
            fluctuation_rate_per_hour: fluctuations,
            quiet_tail_hours: 0,
            templates: vec![FaultTemplate {
                class: LabelClass::KRF1,
                precursor_lead_ticks: 60,
                affected_readings: vec![1],
                precursor_shape: PrecursorShape::Ramp,
                precursor_amplitude: 2.0,
                bit_signature: BTreeMap::from([(0, 1 << 5)]),
                min_duration_ticks: 150,
                max_duration_ticks: 300,
            }],
            noise: NoiseConfig::default(),
            seed: 42,
        }
    }

    #[test]
    fn no_injections_means_permit_up_and_empty_truth() {
        let cfg = base_config(1, 0.0, 0.0);
        let (frames, truth) = generate_corpus(&cfg).unwrap();
        assert_eq!(frames.len(), 1);
        assert!(truth.events.is_empty());
        let p = frames[0].catalog.target_permit(None).unwrap();
        assert!(frames[0].data.column(p).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn same_seed_is_byte_identical_and_par_matches_seq() {
        let cfg = base_config(2, 2.0, 3.0);
        let (a, _) = generate_corpus(&cfg).unwrap();
        let (b, _) = generate_corpus(&cfg).unwrap();
        let (c, _) = generate_corpus_seq(&cfg).unwrap();
        for ((fa, fb), fc) in a.iter().zip(&b).zip(&c) {
            assert!(fa.bit_eq(fb));
            assert!(fa.bit_eq(fc));
        }
    }

    #[test]
    fn permit_is_zero_exactly_during_events() {
        let cfg = base_config(2, 2.0, 2.0);
        let (frames, truth) = generate_corpus(&cfg).unwrap();
        let p = frames[0].catalog.target_permit(None).unwrap();
        let permit: Vec<f32> = frames.iter().flat_map(|f| f.data.column(p).to_vec()).collect();
        let mut expect = vec![1.0f32; permit.len()];
        for e in &truth.events {
            for t in e.start_tick..e.start_tick + e.duration_ticks {
                expect[t as usize] = 0.0;
            }
        }
        assert_eq!(permit, expect);
    }

    #[test]
    fn ramp_precursor_shifts_the_affected_reading_mean() {
        let cfg = base_config(1, 1.0, 0.0);
        let (frames, truth) = generate_corpus(&cfg).unwrap();
        let event = truth.events.first().expect("one outage");
        assert_eq!(event.precursor_lead_ticks, 60);
        let drop = event.start_tick as usize;
        let col = frames[0].data.column(event.affected_devices[0]);
        let mean = |s: &[f32]| s.iter().map(|&v| v as f64).sum::<f64>() / s.len() as f64;
        let during = mean(&col[drop - 60..drop]);
        let before = mean(&col[drop - 120..drop - 60]);
        assert!(
            during - before >= 3.0 * cfg.noise.amplitude,
            "mean shift {} too small",
            during - before
        );
    }

    #[test]
    fn bit_signature_appears_during_outages_and_never_otherwise() {
        let cfg = base_config(2, 2.0, 2.0);
        let (frames, truth) = generate_corpus(&cfg).unwrap();
        let stat = frames[0].catalog.index_by_name("stat_000").unwrap();
        let col: Vec<f32> = frames.iter().flat_map(|f| f.data.column(stat).to_vec()).collect();
        let mask = 1u32 << 5;
        let mut in_outage = vec![false; col.len()];
        for e in truth.outages() {
            for t in e.start_tick..e.start_tick + e.duration_ticks {
                in_outage[t as usize] = true;
            }
        }
        for (t, v) in col.iter().enumerate() {
            let set = (*v as u32) & mask != 0;
            assert_eq!(set, in_outage[t], "tick {t}");
        }
        // signature present within the 2 s window after each drop
        for e in truth.outages() {
            let t = e.start_tick as usize;
            assert!(
                col[t..=t + SIGNATURE_WINDOW_TICKS].iter().any(|&v| (v as u32) & mask != 0)
            );
        }
    }

    #[test]
    fn abrupt_template_leaves_predrop_readings_untouched() {
        let cfg = base_config(1, 0.0, 0.0);
        let (frames, _) = generate_corpus(&cfg).unwrap();
        let template = FaultTemplate {
            class: LabelClass::LRF,
            precursor_lead_ticks: 0,
            affected_readings: vec![0, 1],
            precursor_shape: PrecursorShape::Ramp,
            precursor_amplitude: 2.0,
            bit_signature: BTreeMap::from([(1, 1 << 7)]),
            min_duration_ticks: 150,
            max_duration_ticks: 200,
        };
        let mut rng = rng::stream(9, tag::EVENT, 0);
        let injected = inject_outage(&frames[0], &template, 5_000, &mut rng).unwrap();
        for d in 0..cfg.n_reading {
            let before = &frames[0].data.column(d)[..5_000];
            let after = &injected.data.column(d)[..5_000];
            assert!(before.iter().zip(after).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        let stat = injected.catalog.index_by_name("stat_001").unwrap();
        for k in 0..=SIGNATURE_WINDOW_TICKS {
            assert_ne!((injected.data.get(5_000 + k, stat) as u32) & (1 << 7), 0);
        }
    }

    #[test]
    fn ramp_injection_rises_by_about_the_amplitude() {
        let cfg = base_config(1, 0.0, 0.0);
        let (frames, _) = generate_corpus(&cfg).unwrap();
        let template = FaultTemplate {
            precursor_lead_ticks: 45,
            affected_readings: vec![2],
            ..base_config(1, 1.0, 0.0).templates[0].clone()
        };
        let mut rng = rng::stream(11, tag::EVENT, 0);
        let injected = inject_outage(&frames[0], &template, 10_000, &mut rng).unwrap();
        let delta_injected = injected.data.get(9_999, 2) - injected.data.get(10_000 - 45, 2);
        let delta_baseline = frames[0].data.get(9_999, 2) - frames[0].data.get(10_000 - 45, 2);
        let rise = (delta_injected - delta_baseline) as f64;
        // ramp contributes a*(44/45); the rest is noise difference
        assert!((rise - 2.0 * 44.0 / 45.0).abs() < 1e-3, "rise {rise}");
    }

    #[test]
    fn out_of_range_drop_is_a_bounds_error() {
        let cfg = base_config(1, 0.0, 0.0);
        let (frames, _) = generate_corpus(&cfg).unwrap();
        let template = base_config(1, 1.0, 0.0).templates[0].clone();
        let mut rng = rng::stream(1, tag::EVENT, 0);
        let err = inject_outage(&frames[0], &template, HOUR_TICKS - 10, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));
    }

    #[test]
    fn infeasible_density_is_a_config_error() {
        let mut cfg = base_config(1, 80.0, 0.0);
        cfg.templates[0].min_duration_ticks = 150;
        cfg.templates[0].max_duration_ticks = 150;
        // 80 events x (700 + 150 + 160) padded ticks > 54000 available
        let err = generate_corpus(&cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn truth_events_are_sorted_and_non_overlapping() {
        let cfg = base_config(3, 3.0, 4.0);
        let (_, truth) = generate_corpus(&cfg).unwrap();
        assert_eq!(truth.outages().count(), 9);
        assert_eq!(truth.fluctuations().count(), 12);
        for pair in truth.events.windows(2) {
            assert!(pair[0].start_tick + pair[0].duration_ticks <= pair[1].start_tick);
        }
    }
}
