//! Hour frames: one hour of telemetry for the full device catalog.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::catalog::DeviceCatalog;
use crate::error::{Error, Result};
use crate::labels::LabelClass;

/// Column-major tick matrix: device `d`'s samples are contiguous at
/// `values[d * n_ticks .. (d + 1) * n_ticks]`. Missing samples are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct TickMatrix {
    n_ticks: usize,
    n_devices: usize,
    values: Vec<f32>,
}

impl TickMatrix {
    pub fn zeros(n_ticks: usize, n_devices: usize) -> Self {
        Self { n_ticks, n_devices, values: vec![0.0; n_ticks * n_devices] }
    }

    pub fn filled(n_ticks: usize, n_devices: usize, value: f32) -> Self {
        Self { n_ticks, n_devices, values: vec![value; n_ticks * n_devices] }
    }

    pub fn from_values(n_ticks: usize, n_devices: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n_ticks * n_devices {
            return Err(Error::invariant(format!(
                "value buffer has {} entries, expected {} ({} ticks x {} devices)",
                values.len(),
                n_ticks * n_devices,
                n_ticks,
                n_devices
            )));
        }
        Ok(Self { n_ticks, n_devices, values })
    }

    pub fn n_ticks(&self) -> usize {
        self.n_ticks
    }

    pub fn n_devices(&self) -> usize {
        self.n_devices
    }

    #[inline]
    pub fn get(&self, tick: usize, device: usize) -> f32 {
        self.values[device * self.n_ticks + tick]
    }

    #[inline]
    pub fn set(&mut self, tick: usize, device: usize, value: f32) {
        self.values[device * self.n_ticks + tick] = value;
    }

    pub fn column(&self, device: usize) -> &[f32] {
        &self.values[device * self.n_ticks..(device + 1) * self.n_ticks]
    }

    pub fn column_mut(&mut self, device: usize) -> &mut [f32] {
        &mut self.values[device * self.n_ticks..(device + 1) * self.n_ticks]
    }

    pub fn raw(&self) -> &[f32] {
        &self.values
    }

    /// Bitwise equality, treating NaNs with equal payloads as equal.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.n_ticks == other.n_ticks
            && self.n_devices == other.n_devices
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Copies ticks `[start, start + len)` into a new matrix.
    pub fn slice_ticks(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.n_ticks {
            return Err(Error::Geometry(format!(
                "tick slice [{start}, {}) exceeds {} ticks",
                start + len,
                self.n_ticks
            )));
        }
        let mut out = TickMatrix::zeros(len, self.n_devices);
        for d in 0..self.n_devices {
            let src = &self.column(d)[start..start + len];
            out.column_mut(d).copy_from_slice(src);
        }
        Ok(out)
    }
}

/// One hour of samples for a device catalog; the unit of storage and
/// normalization.
#[derive(Debug, Clone)]
pub struct HourFrame {
    pub catalog: Arc<DeviceCatalog>,
    /// Epoch seconds of the first tick.
    pub start_time: u64,
    pub data: TickMatrix,
}

impl HourFrame {
    pub fn new(catalog: Arc<DeviceCatalog>, start_time: u64, data: TickMatrix) -> Self {
        Self { catalog, start_time, data }
    }

    pub fn n_ticks(&self) -> usize {
        self.data.n_ticks()
    }

    pub fn n_devices(&self) -> usize {
        self.data.n_devices()
    }

    pub fn validate(&self) -> Result<()> {
        self.catalog.validate()?;
        if self.data.n_devices() != self.catalog.len() {
            return Err(Error::invariant(format!(
                "matrix has {} device columns, catalog lists {}",
                self.data.n_devices(),
                self.catalog.len()
            )));
        }
        let max_ticks = self.catalog.tick_rate_hz as usize * 3600;
        if self.data.n_ticks() > max_ticks {
            return Err(Error::invariant(format!(
                "{} ticks exceeds one hour at {} Hz",
                self.data.n_ticks(),
                self.catalog.tick_rate_hz
            )));
        }
        Ok(())
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        *self.catalog == *other.catalog
            && self.start_time == other.start_time
            && self.data.bit_eq(&other.data)
    }
}

/// A permit-down episode. `class`/`confidence` are filled by whichever
/// labeler produced the record; ground-truth events leave confidence empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageEvent {
    /// Global tick index of the permit drop.
    pub start_tick: u64,
    pub duration_ticks: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<LabelClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}
