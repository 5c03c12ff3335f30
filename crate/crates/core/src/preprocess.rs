//! Per-file preprocessing: forward fill followed by local normalization.

use crate::error::{Error, Result};
use crate::frame::HourFrame;

/// Minimum standard deviation used as a z-score denominator. Keeps constant
/// columns (flat settings) from dividing by zero; they normalize to zero.
pub const SIGMA_FLOOR: f64 = 1e-9;

/// Fills missing samples and z-scores the analogue columns.
///
/// Per column: NaNs are replaced by the most recent prior value, leading
/// NaNs by the first valid value, and all-NaN columns become all zero.
/// Reading and Setting columns are then centered on the file's population
/// mean and scaled to unit variance (denominator `max(sigma, 1e-9)`);
/// Permit and StatusBits columns are filled but left unscaled.
pub fn preprocess_frame(frame: &HourFrame) -> Result<HourFrame> {
    if frame.n_ticks() == 0 {
        return Err(Error::invariant("cannot preprocess an empty frame"));
    }
    if frame.n_devices() != frame.catalog.len() {
        return Err(Error::invariant("matrix width does not match catalog"));
    }

    let mut out = frame.clone();
    for (d, spec) in frame.catalog.devices.iter().enumerate() {
        let col = out.data.column_mut(d);
        forward_fill(col);
        if spec.kind.is_normalized() {
            zscore(col);
        }
    }
    Ok(out)
}

fn forward_fill(col: &mut [f32]) {
    let first_valid = col.iter().position(|v| !v.is_nan());
    let Some(first) = first_valid else {
        col.fill(0.0);
        return;
    };
    // Leading NaNs take the first valid value.
    let fill = col[first];
    for v in &mut col[..first] {
        *v = fill;
    }
    let mut last = fill;
    for v in &mut col[first..] {
        if v.is_nan() {
            *v = last;
        } else {
            last = *v;
        }
    }
}

fn zscore(col: &mut [f32]) {
    let n = col.len() as f64;
    let mean = col.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = col.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt().max(SIGMA_FLOOR);
    for v in col.iter_mut() {
        *v = ((*v as f64 - mean) / sigma) as f32;
    }
}
