//! Instance extraction and window construction.
//!
//! An instance is a 600-tick (40 s) segment. Outage instances place the
//! permit drop at tick 450 (30 s in, 10 s after); non-outage instances are
//! cropped at the 20th minute of a >= 30 min permit-up run, at most one per
//! hour file. Instances are cut from preprocessed frames and may span file
//! boundaries.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

use crate::catalog::{DeviceCatalog, DeviceKind};
use crate::error::{Error, Result};
use crate::format;
use crate::frame::{HourFrame, TickMatrix};
use crate::labels::LabelClass;
use crate::rng::{self, tag};

/// Instance length: 40 s at 15 Hz.
pub const INSTANCE_TICKS: usize = 600;
/// Ticks before the drop inside an outage instance: 30 s at 15 Hz.
pub const PRE_DROP_TICKS: usize = 450;
/// Minimum permit-down run for an outage: 10 s at 15 Hz.
pub const MIN_OUTAGE_TICKS: usize = 150;
/// Minimum permit-up run for a non-outage crop: 30 min at 15 Hz.
pub const MIN_UP_RUN_TICKS: usize = 27_000;
/// Crop offset into a qualifying up-run: the 20th minute.
pub const CROP_OFFSET_TICKS: usize = 18_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    Outage,
    NonOutage,
}

/// A 40-second extracted segment plus metadata.
#[derive(Debug, Clone)]
pub struct Instance {
    pub kind: InstanceKind,
    pub catalog: Arc<DeviceCatalog>,
    pub ticks: TickMatrix,
    /// Tick index of the permit drop within the instance; outages only.
    pub drop_offset: Option<usize>,
    pub source_file: String,
    pub global_start_tick: u64,
    pub label: Option<LabelClass>,
}

impl Instance {
    /// Stable identifier used by split manifests.
    pub fn id(&self) -> String {
        let kind = match self.kind {
            InstanceKind::Outage => "outage",
            InstanceKind::NonOutage => "non_outage",
        };
        format!("{kind}:{:012}", self.global_start_tick)
    }

    /// Global tick of the permit drop; outages only.
    pub fn global_drop_tick(&self) -> Option<u64> {
        self.drop_offset.map(|d| self.global_start_tick + d as u64)
    }

    pub fn permit_column(&self, target_permit: usize) -> &[f32] {
        self.ticks.column(target_permit)
    }
}

/// Geometry of a training window: look-back, gap, and look-forward spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub lookback: usize,
    pub gap: usize,
    pub horizon: usize,
}

impl Geometry {
    pub fn new(lookback: usize, gap: usize, horizon: usize) -> Self {
        Self { lookback, gap, horizon }
    }

    pub fn span(&self) -> usize {
        self.lookback + self.gap + self.horizon
    }

    pub fn validate(&self, instance_ticks: usize) -> Result<()> {
        if self.lookback == 0 {
            return Err(Error::Geometry("look-back must be >= 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Geometry("look-forward must be >= 1".into()));
        }
        if self.span() > instance_ticks {
            return Err(Error::Geometry(format!(
                "window span {} exceeds instance length {instance_ticks}",
                self.span()
            )));
        }
        Ok(())
    }

    /// Number of stride-`stride` windows over `instance_ticks` ticks.
    pub fn window_count(&self, instance_ticks: usize, stride: usize) -> usize {
        (instance_ticks - self.span()) / stride + 1
    }
}

/// One training sample: a Reading-only look-back block and the permit values
/// over the look-forward span. `ref_permit` is the permit at the tick just
/// before the forecast start, used only by the persistence baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// Row-major `[lookback x n_readings]`.
    pub lookback: Vec<f64>,
    pub target: Vec<f64>,
    pub ref_permit: f64,
    pub geometry: Geometry,
}

/// Lazily indexed window collection over a set of instances. Windows are
/// gathered on demand so large corpora do not materialize every sample.
#[derive(Debug, Clone)]
pub struct WindowSet {
    instances: Vec<Instance>,
    reading_cols: Vec<usize>,
    target_permit: usize,
    geometry: Geometry,
    stride: usize,
    index: Vec<(u32, u32)>,
}

impl WindowSet {
    pub fn new(
        instances: Vec<Instance>,
        geometry: Geometry,
        stride: usize,
        target_permit: Option<&str>,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Geometry("stride must be >= 1".into()));
        }
        let Some(first) = instances.first() else {
            return Err(Error::invariant("window set needs at least one instance"));
        };
        geometry.validate(first.ticks.n_ticks())?;
        let catalog = Arc::clone(&first.catalog);
        let reading_cols = catalog.indices_of(DeviceKind::Reading);
        let target = catalog.target_permit(target_permit)?;
        let mut index = Vec::new();
        for (i, inst) in instances.iter().enumerate() {
            if *inst.catalog != *catalog {
                return Err(Error::Shape("instances have differing catalogs".into()));
            }
            geometry.validate(inst.ticks.n_ticks())?;
            let count = geometry.window_count(inst.ticks.n_ticks(), stride);
            for w in 0..count {
                index.push((i as u32, (w * stride) as u32));
            }
        }
        Ok(Self { instances, reading_cols, target_permit: target, geometry, stride, index })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn n_readings(&self) -> usize {
        self.reading_cols.len()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    /// Fills preallocated buffers with window `w`; returns the reference
    /// permit value. `lookback` must hold `lookback * n_readings` entries and
    /// `target` `horizon` entries.
    pub fn fill(&self, w: usize, lookback: &mut [f64], target: &mut [f64]) -> f64 {
        let (inst_idx, start) = self.index[w];
        let inst = &self.instances[inst_idx as usize];
        let g = self.geometry;
        let start = start as usize;
        let n = self.reading_cols.len();
        for (j, &col) in self.reading_cols.iter().enumerate() {
            let column = inst.ticks.column(col);
            for t in 0..g.lookback {
                lookback[t * n + j] = column[start + t] as f64;
            }
        }
        let permit = inst.ticks.column(self.target_permit);
        let fstart = start + g.lookback + g.gap;
        for (k, slot) in target.iter_mut().enumerate() {
            *slot = permit[fstart + k] as f64;
        }
        permit[fstart - 1] as f64
    }

    pub fn sample(&self, w: usize) -> WindowSample {
        let g = self.geometry;
        let mut lookback = vec![0.0; g.lookback * self.reading_cols.len()];
        let mut target = vec![0.0; g.horizon];
        let ref_permit = self.fill(w, &mut lookback, &mut target);
        WindowSample { lookback, target, ref_permit, geometry: g }
    }
}

/// All stride-`stride` windows of one instance, materialized. Look-back
/// blocks carry Reading columns only.
pub fn make_windows(
    instance: &Instance,
    geometry: Geometry,
    stride: usize,
    target_permit: Option<&str>,
) -> Result<Vec<WindowSample>> {
    let set = WindowSet::new(vec![instance.clone()], geometry, stride, target_permit)?;
    Ok((0..set.len()).map(|w| set.sample(w)).collect())
}

/// Streaming outage extractor over a contiguous, preprocessed frame sequence.
///
/// A drop qualifies once its permit-down run reaches 150 ticks; the instance
/// covers `[drop - 450, drop + 150)` and may span file boundaries. Drops
/// within 450 ticks of corpus start are skipped.
pub struct OutageExtractor {
    target_name: Option<String>,
    catalog: Option<Arc<DeviceCatalog>>,
    target_permit: usize,
    /// Rolling buffer of the latest `INSTANCE_TICKS` rows, row-major.
    buffer: Vec<f32>,
    buffer_len: usize,
    global_tick: u64,
    next_start_time: Option<u64>,
    prev_permit: f32,
    run_start: Option<u64>,
    emitted_current_run: bool,
    current_file: String,
    file_of_buffer_row: Vec<String>,
    instances: Vec<Instance>,
}

impl OutageExtractor {
    pub fn new(target_permit: Option<&str>) -> Self {
        Self {
            target_name: target_permit.map(str::to_string),
            catalog: None,
            target_permit: 0,
            buffer: Vec::new(),
            buffer_len: 0,
            global_tick: 0,
            next_start_time: None,
            prev_permit: 1.0,
            run_start: None,
            emitted_current_run: false,
            current_file: String::new(),
            file_of_buffer_row: Vec::new(),
            instances: Vec::new(),
        }
    }

    pub fn push_frame(&mut self, frame: &HourFrame, file_name: &str) -> Result<()> {
        let catalog = match &self.catalog {
            None => {
                self.catalog = Some(Arc::clone(&frame.catalog));
                self.target_permit = frame.catalog.target_permit(self.target_name.as_deref())?;
                self.buffer = vec![0.0; INSTANCE_TICKS * frame.catalog.len()];
                self.file_of_buffer_row = vec![String::new(); INSTANCE_TICKS];
                self.catalog.as_ref().unwrap()
            }
            Some(c) => {
                if **c != *frame.catalog {
                    return Err(Error::Gap("catalog changed between frames".into()));
                }
                c
            }
        };
        if let Some(expected) = self.next_start_time {
            if frame.start_time != expected {
                return Err(Error::Gap(format!(
                    "expected frame starting at {expected}, got {}",
                    frame.start_time
                )));
            }
        }
        self.next_start_time =
            Some(frame.start_time + frame.n_ticks() as u64 / catalog.tick_rate_hz as u64);
        self.current_file = file_name.to_string();

        let n_dev = frame.n_devices();
        let permit_col = frame.data.column(self.target_permit).to_vec();
        for (t, &permit) in permit_col.iter().enumerate() {
            let row = (self.global_tick as usize) % INSTANCE_TICKS;
            for d in 0..n_dev {
                self.buffer[row * n_dev + d] = frame.data.get(t, d);
            }
            self.file_of_buffer_row[row] = self.current_file.clone();
            self.buffer_len = (self.buffer_len + 1).min(INSTANCE_TICKS);

            if self.prev_permit != 0.0 && permit == 0.0 {
                self.run_start = Some(self.global_tick);
                self.emitted_current_run = false;
            } else if permit != 0.0 {
                self.run_start = None;
            }

            if let Some(start) = self.run_start {
                let run_len = self.global_tick - start + 1;
                if run_len == MIN_OUTAGE_TICKS as u64 && !self.emitted_current_run {
                    self.emitted_current_run = true;
                    if start >= PRE_DROP_TICKS as u64 && self.buffer_len == INSTANCE_TICKS {
                        self.emit_instance(start)?;
                    }
                }
            }
            self.global_tick += 1;
            self.prev_permit = permit;
        }
        Ok(())
    }

    fn emit_instance(&mut self, drop_tick: u64) -> Result<()> {
        let catalog = self.catalog.as_ref().unwrap();
        let n_dev = catalog.len();
        let instance_start = drop_tick - PRE_DROP_TICKS as u64;
        // current global tick is drop + 149; buffer holds exactly the window
        let mut data = TickMatrix::zeros(INSTANCE_TICKS, n_dev);
        let mut source_file = String::new();
        for i in 0..INSTANCE_TICKS {
            let row = ((instance_start as usize) + i) % INSTANCE_TICKS;
            if i == 0 {
                source_file = self.file_of_buffer_row[row].clone();
            }
            for d in 0..n_dev {
                data.set(i, d, self.buffer[row * n_dev + d]);
            }
        }
        self.instances.push(Instance {
            kind: InstanceKind::Outage,
            catalog: Arc::clone(catalog),
            ticks: data,
            drop_offset: Some(PRE_DROP_TICKS),
            source_file,
            global_start_tick: instance_start,
            label: None,
        });
        Ok(())
    }

    pub fn finish(self) -> Vec<Instance> {
        self.instances
    }
}

/// Emits an outage instance for every qualifying permit drop across the
/// preprocessed frames, in drop order.
pub fn extract_outage_instances(
    frames: &[HourFrame],
    target_permit: Option<&str>,
) -> Result<Vec<Instance>> {
    let mut ex = OutageExtractor::new(target_permit);
    for (i, frame) in frames.iter().enumerate() {
        ex.push_frame(frame, &crate::synth::hour_file_name(i))?;
    }
    Ok(ex.finish())
}

/// Crops at most one non-outage instance per hour file: the first maximal
/// permit-up run of at least 30 minutes yields a 600-tick window starting at
/// its 20th minute.
pub fn extract_nonoutage_instances(
    frames: &[HourFrame],
    target_permit: Option<&str>,
) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    let mut global_base = 0u64;
    let mut prev_end: Option<u64> = None;
    for (i, frame) in frames.iter().enumerate() {
        if let Some(expected) = prev_end {
            if frame.start_time != expected {
                return Err(Error::Gap(format!(
                    "expected frame starting at {expected}, got {}",
                    frame.start_time
                )));
            }
        }
        prev_end =
            Some(frame.start_time + frame.n_ticks() as u64 / frame.catalog.tick_rate_hz as u64);
        if let Some(inst) =
            nonoutage_from_frame(frame, &crate::synth::hour_file_name(i), global_base, target_permit)?
        {
            out.push(inst);
        }
        global_base += frame.n_ticks() as u64;
    }
    Ok(out)
}

pub fn nonoutage_from_frame(
    frame: &HourFrame,
    file_name: &str,
    global_base: u64,
    target_permit: Option<&str>,
) -> Result<Option<Instance>> {
    let target = frame.catalog.target_permit(target_permit)?;
    let permit = frame.data.column(target);
    let mut run_start = None;
    for (t, &v) in permit.iter().enumerate() {
        if v != 0.0 {
            if run_start.is_none() {
                run_start = Some(t);
            }
            let start = run_start.unwrap();
            let run_len = t - start + 1;
            if run_len >= MIN_UP_RUN_TICKS {
                let crop = start + CROP_OFFSET_TICKS;
                let ticks = frame.data.slice_ticks(crop, INSTANCE_TICKS)?;
                return Ok(Some(Instance {
                    kind: InstanceKind::NonOutage,
                    catalog: Arc::clone(&frame.catalog),
                    ticks,
                    drop_offset: None,
                    source_file: file_name.to_string(),
                    global_start_tick: global_base + crop as u64,
                    label: None,
                }));
            }
        } else {
            run_start = None;
        }
    }
    Ok(None)
}

/// Attaches truth classes to outage instances by exact drop-tick match.
pub fn label_from_truth(instances: &mut [Instance], truth: &crate::synth::GroundTruth) {
    for inst in instances.iter_mut() {
        if let Some(drop) = inst.global_drop_tick() {
            if let Some(event) = truth.events.iter().find(|e| e.start_tick == drop) {
                inst.label = event.class.or_else(|| {
                    event.raw_label.as_deref().map(crate::labels::canonicalize_label)
                });
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Deterministic train/val/test assignment, stratified by instance kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub version: u32,
    pub seed: u64,
    pub fractions: [f64; 3],
    pub assignments: Vec<(String, Split)>,
    pub counts: std::collections::BTreeMap<String, usize>,
}

impl SplitManifest {
    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.assignments.iter().find(|(i, _)| i == id).map(|(_, s)| *s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

/// Seeded shuffle then exact partition, independently per instance kind.
/// The assignment depends only on the seed, fractions, and the set of
/// instance ids, not on input order.
pub fn split_instances(
    instances: &[Instance],
    fractions: [f64; 3],
    seed: u64,
) -> Result<SplitManifest> {
    if instances.is_empty() {
        return Err(Error::invariant("cannot split an empty instance list"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| f < 0.0) {
        return Err(Error::config("fractions must be non-negative and sum to 1"));
    }

    let mut assignments = Vec::with_capacity(instances.len());
    let mut counts = std::collections::BTreeMap::new();
    for (kind_idx, kind) in [InstanceKind::Outage, InstanceKind::NonOutage].iter().enumerate() {
        let mut ids: Vec<String> =
            instances.iter().filter(|i| i.kind == *kind).map(|i| i.id()).collect();
        ids.sort();
        ids.dedup();
        let mut rng = rng::stream(seed, tag::SPLIT, kind_idx as u64);
        ids.shuffle(&mut rng);
        let n = ids.len();
        let n_train = (fractions[0] * n as f64).floor() as usize;
        let n_val = (fractions[1] * n as f64).floor() as usize;
        for (i, id) in ids.into_iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            let key = format!(
                "{}_{}",
                match kind {
                    InstanceKind::Outage => "outage",
                    InstanceKind::NonOutage => "non_outage",
                },
                match split {
                    Split::Train => "train",
                    Split::Val => "val",
                    Split::Test => "test",
                }
            );
            *counts.entry(key).or_insert(0) += 1;
            assignments.push((id, split));
        }
    }
    assignments.sort();
    Ok(SplitManifest { version: 1, seed, fractions, assignments, counts })
}

/// Index entry for one stored instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub file: String,
    pub kind: InstanceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_offset: Option<usize>,
    pub source_file: String,
    pub global_start_tick: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<LabelClass>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceIndex {
    pub version: u32,
    pub instances: Vec<InstanceRecord>,
}

/// Writes instances as FHF1 mini-frames plus an `instances.json` index.
pub fn save_instances(instances: &[Instance], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        let file = format!("instance_{i:05}.fhf");
        let rate = inst.catalog.tick_rate_hz as u64;
        let frame = HourFrame::new(
            Arc::clone(&inst.catalog),
            crate::synth::CORPUS_EPOCH + inst.global_start_tick / rate,
            inst.ticks.clone(),
        );
        format::write_hour_frame_file(&frame, dir.join(&file))?;
        records.push(InstanceRecord {
            file,
            kind: inst.kind,
            drop_offset: inst.drop_offset,
            source_file: inst.source_file.clone(),
            global_start_tick: inst.global_start_tick,
            label: inst.label,
        });
    }
    let index = InstanceIndex { version: 1, instances: records };
    let f = std::fs::File::create(dir.join("instances.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &index)?;
    Ok(())
}

/// Loads an instance store written by [`save_instances`].
pub fn load_instances(dir: impl AsRef<Path>) -> Result<Vec<Instance>> {
    let dir = dir.as_ref();
    let f = std::fs::File::open(dir.join("instances.json"))?;
    let index: InstanceIndex = serde_json::from_reader(std::io::BufReader::new(f))?;
    let mut out = Vec::with_capacity(index.instances.len());
    for rec in index.instances {
        let frame = format::read_hour_frame_file(dir.join(&rec.file))?;
        out.push(Instance {
            kind: rec.kind,
            catalog: frame.catalog,
            ticks: frame.data,
            drop_offset: rec.drop_offset,
            source_file: rec.source_file,
            global_start_tick: rec.global_start_tick,
            label: rec.label,
        });
    }
    Ok(out)
}
