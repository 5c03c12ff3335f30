//! Streaming replay: emulates online inference against a live 15 Hz feed.
//!
//! A producer thread reads hour files in order, preprocesses each file on
//! load (the same per-file normalization as the offline pipeline), and emits
//! ticks at `15 * speed` Hz through a bounded channel of 64 ticks. The
//! consumer keeps a rolling look-back buffer, runs inference once per tick
//! after the buffer fills, applies the detection rule, and records alerts
//! and per-tick latency. The bounded hand-off back-pressures the producer;
//! ticks are never dropped or reordered.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use permit_sentry::catalog::DeviceKind;
use permit_sentry::detect::{Alert, RollingDetector};
use permit_sentry::error::{Error, Result};
use permit_sentry::forecast::TrainedModel;
use permit_sentry::format;
use permit_sentry::preprocess::preprocess_frame;

/// Bounded hand-off capacity between producer and consumer, in ticks.
pub const CHANNEL_CAPACITY: usize = 64;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyStats {
    pub p50_s: f64,
    pub p95_s: f64,
    pub max_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayStats {
    pub version: u32,
    /// Inference steps executed (ticks seen minus the buffer fill).
    pub ticks_processed: u64,
    pub alerts: Vec<Alert>,
    pub latency: LatencyStats,
    /// Inference steps whose latency exceeded the tick period.
    pub deadline_misses: u64,
    pub tick_period_s: f64,
}

impl ReplayStats {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }
}

/// Sorted `hour_*.fhf` paths under a corpus directory.
pub fn hour_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension().is_some_and(|x| x == "fhf")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("hour_"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!(
            "no hour_*.fhf files under {}",
            dir.as_ref().display()
        )));
    }
    Ok(files)
}

/// Replays the corpus through the model. `speed = 0` streams unthrottled;
/// `max_ticks` bounds how much of the corpus is consumed.
pub fn replay(
    data_dir: impl AsRef<Path>,
    model: &TrainedModel,
    threshold: f64,
    speed: f64,
    max_ticks: Option<u64>,
) -> Result<ReplayStats> {
    if speed < 0.0 {
        return Err(Error::Config("speed must be >= 0".into()));
    }
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::Config("threshold must lie strictly between 0 and 1".into()));
    }
    let files = hour_files(&data_dir)?;

    // validate the catalog against the model before streaming starts
    let first = format::read_hour_frame_file(&files[0])?;
    let reading_cols = first.catalog.indices_of(DeviceKind::Reading);
    if reading_cols.len() != model.spec.input_dim {
        return Err(Error::Shape(format!(
            "model expects {} readings, corpus provides {}",
            model.spec.input_dim,
            reading_cols.len()
        )));
    }
    let tick_rate = first.catalog.tick_rate_hz as f64;
    let mut detector = RollingDetector::new(model)?;

    let nominal_period = 1.0 / tick_rate;
    let pace_period = if speed > 0.0 { nominal_period / speed } else { 0.0 };
    // the deadline is the period of the stream being emulated
    let deadline = if speed > 0.0 { nominal_period / speed } else { nominal_period };

    let (tx, rx) = mpsc::sync_channel::<Result<Vec<f64>>>(CHANNEL_CAPACITY);
    let budget = max_ticks.unwrap_or(u64::MAX);
    let producer = std::thread::spawn(move || {
        let start = Instant::now();
        let mut emitted: u64 = 0;
        let mut expected_start = None;
        let mut pending = Some(first);
        let mut file_idx = 0usize;
        'outer: loop {
            let frame = match pending.take() {
                Some(f) => f,
                None => {
                    file_idx += 1;
                    if file_idx >= files.len() {
                        break;
                    }
                    match format::read_hour_frame_file(&files[file_idx]) {
                        Ok(f) => f,
                        Err(e) => {
                            let _ = tx.send(Err(e));
                            break;
                        }
                    }
                }
            };
            if let Some(expected) = expected_start {
                if frame.start_time != expected {
                    let _ = tx.send(Err(Error::Gap(format!(
                        "expected hour starting at {expected}, got {}",
                        frame.start_time
                    ))));
                    break;
                }
            }
            expected_start = Some(
                frame.start_time + frame.n_ticks() as u64 / frame.catalog.tick_rate_hz as u64,
            );
            let frame = match preprocess_frame(&frame) {
                Ok(f) => f,
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            };
            let cols = frame.catalog.indices_of(DeviceKind::Reading);
            for t in 0..frame.n_ticks() {
                if emitted >= budget {
                    break 'outer;
                }
                if pace_period > 0.0 {
                    let due = start + Duration::from_secs_f64(emitted as f64 * pace_period);
                    let now = Instant::now();
                    if due > now {
                        std::thread::sleep(due - now);
                    }
                }
                let row: Vec<f64> = cols.iter().map(|&c| frame.data.get(t, c) as f64).collect();
                if tx.send(Ok(row)).is_err() {
                    break 'outer;
                }
                emitted += 1;
            }
        }
    });

    let mut alerts = Vec::new();
    let mut latencies: Vec<f64> = Vec::new();
    let mut deadline_misses = 0u64;
    let mut tick: u64 = 0;
    let mut inferences: u64 = 0;
    while let Ok(message) = rx.recv() {
        let row = message?;
        let t0 = Instant::now();
        let verdict = detector.push_tick(&row)?;
        if let Some(min) = verdict {
            let dt = t0.elapsed().as_secs_f64();
            latencies.push(dt);
            if dt > deadline {
                deadline_misses += 1;
            }
            inferences += 1;
            if min < threshold {
                alerts.push(Alert { tick, min_forecast: min });
            }
        }
        tick += 1;
    }
    producer.join().map_err(|_| Error::Config("replay producer panicked".into()))?;

    latencies.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = |q: f64| -> f64 {
        if latencies.is_empty() {
            return 0.0;
        }
        let idx = ((q * latencies.len() as f64).ceil() as usize).clamp(1, latencies.len());
        latencies[idx - 1]
    };
    Ok(ReplayStats {
        version: 1,
        ticks_processed: inferences,
        alerts,
        latency: LatencyStats {
            p50_s: pct(0.50),
            p95_s: pct(0.95),
            max_s: latencies.last().copied().unwrap_or(0.0),
        },
        deadline_misses,
        tick_period_s: deadline,
    })
}
