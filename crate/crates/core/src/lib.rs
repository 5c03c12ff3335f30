//! Beam-permit outage prediction and diagnosis on synthetic accelerator telemetry.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! - [`synth`] generates hour files of accelerator-like telemetry with
//!   injected permit outages, precursor signatures, and status-bit patterns,
//!   plus a ground-truth sidecar.
//! - [`dataset`] extracts outage / non-outage instances from hour files and
//!   turns them into overlapping look-back windows.
//! - [`forecast`] holds the from-scratch forecasters (persistence, linear,
//!   MLP, LSTM) with Adam training, gradient clipping, early stopping, and
//!   exponential learning-rate decay.
//! - [`detect`] runs threshold-based detection over forecasts and produces
//!   evaluation reports, sensitivity sweeps, benchmark numbers, and duration
//!   statistics.
//! - [`label`] diagnoses outage causes with a random-forest classifier and a
//!   learned bit-pattern labeler, including cross-validation and
//!   labeler-consistency analysis.
//!
//! Hour files use the `FHF1` binary format ([`format`]), trained forecasters
//! the `PSM1` format, and forests the `PSF1` format. All report files are
//! JSON with a top-level `"version": 1` field.
//!
//! With the default `parallel` feature, corpus generation, forest fitting,
//! and evaluation fan out over rayon; the `*_seq` variants are the
//! single-threaded reference paths and produce bit-identical results.

pub mod catalog;
pub mod dataset;
pub mod detect;
pub mod error;
pub mod forecast;
pub mod format;
pub mod frame;
pub mod label;
pub mod labels;
pub mod preprocess;
pub mod rng;
pub mod synth;

pub use catalog::{DeviceCatalog, DeviceKind, DeviceSpec};
pub use error::{Error, Result};
pub use frame::{HourFrame, OutageEvent, TickMatrix};
pub use labels::LabelClass;
