//! Property tests: format round trips are bit-exact and preprocessing
//! leaves no NaNs while centering the analogue columns.

use proptest::prelude::*;
use std::sync::Arc;

use permit_sentry::catalog::{DeviceCatalog, DeviceKind, DeviceSpec};
use permit_sentry::forecast::{self, ModelSpec, TrainedModel};
use permit_sentry::frame::{HourFrame, TickMatrix};
use permit_sentry::preprocess::preprocess_frame;
use permit_sentry::{format, labels::LabelClass};

fn device_kind_strategy() -> impl Strategy<Value = DeviceKind> {
    prop_oneof![
        Just(DeviceKind::Reading),
        Just(DeviceKind::Setting),
        Just(DeviceKind::StatusBits),
    ]
}

/// Value strategy per device kind; readings mix finite values, NaN payloads,
/// and raw bit patterns.
fn column_strategy(kind: DeviceKind, n_ticks: usize) -> BoxedStrategy<Vec<f32>> {
    match kind {
        DeviceKind::Permit => prop::collection::vec(
            prop_oneof![Just(1.0f32), Just(0.0f32), Just(f32::NAN)],
            n_ticks,
        )
        .boxed(),
        DeviceKind::StatusBits => prop::collection::vec(
            prop_oneof![(0u32..1 << 24).prop_map(|v| v as f32), Just(f32::NAN)],
            n_ticks,
        )
        .boxed(),
        _ => prop::collection::vec(
            prop_oneof![
                4 => -1e6f32..1e6f32,
                1 => Just(f32::NAN),
                1 => any::<u32>().prop_map(f32::from_bits),
            ],
            n_ticks,
        )
        .boxed(),
    }
}

fn frame_strategy() -> impl Strategy<Value = HourFrame> {
    (1usize..40, prop::collection::vec(device_kind_strategy(), 0..5))
        .prop_flat_map(|(n_ticks, kinds)| {
            let mut devices: Vec<DeviceSpec> = kinds
                .iter()
                .enumerate()
                .map(|(i, k)| DeviceSpec::new(format!("dev_{i}"), *k))
                .collect();
            devices.push(DeviceSpec::new("permit", DeviceKind::Permit));
            let columns: Vec<BoxedStrategy<Vec<f32>>> =
                devices.iter().map(|d| column_strategy(d.kind, n_ticks)).collect();
            (Just(devices), Just(n_ticks), columns, any::<u64>())
        })
        .prop_map(|(devices, n_ticks, columns, start_time)| {
            let n_dev = devices.len();
            let catalog = Arc::new(DeviceCatalog { devices, tick_rate_hz: 15 });
            let mut values = Vec::with_capacity(n_ticks * n_dev);
            for col in columns {
                values.extend_from_slice(&col);
            }
            let data = TickMatrix::from_values(n_ticks, n_dev, values).unwrap();
            HourFrame::new(catalog, start_time % (1 << 40), data)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hour_frame_round_trip_is_bit_exact(frame in frame_strategy()) {
        let mut bytes = Vec::new();
        let written = format::write_hour_frame(&frame, &mut bytes).unwrap();
        prop_assert_eq!(written as usize, bytes.len());
        let back = format::read_hour_frame(bytes.as_slice()).unwrap();
        prop_assert!(back.bit_eq(&frame));
    }

    #[test]
    fn preprocessed_frames_have_no_nans_and_unit_moments(frame in frame_strategy()) {
        // preprocessing expects plain measurements, not inf/huge bit patterns
        let mut clean = frame.clone();
        for d in 0..clean.n_devices() {
            for t in 0..clean.data.n_ticks() {
                let v = clean.data.get(t, d);
                if !v.is_nan() && !v.is_finite() {
                    clean.data.set(t, d, 0.0);
                }
            }
        }
        let out = preprocess_frame(&clean).unwrap();
        for d in 0..out.n_devices() {
            prop_assert!(out.data.column(d).iter().all(|v| !v.is_nan()));
        }
        // re-derive the normalization in f64 and check its moments
        for (d, spec) in clean.catalog.devices.iter().enumerate() {
            if !spec.kind.is_normalized() {
                continue;
            }
            let col = clean.data.column(d);
            let mut filled: Vec<f64> = Vec::with_capacity(col.len());
            let first_valid = col.iter().find(|v| !v.is_nan()).copied().unwrap_or(0.0) as f64;
            let mut last = first_valid;
            for &v in col {
                if v.is_nan() {
                    filled.push(last);
                } else {
                    last = v as f64;
                    filled.push(last);
                }
            }
            let n = filled.len() as f64;
            let mean = filled.iter().sum::<f64>() / n;
            let sigma = (filled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            if sigma <= 1e-9 {
                // clamped column normalizes to zero
                prop_assert!(out.data.column(d).iter().all(|&v| v.abs() < 1e-3));
                continue;
            }
            let z: Vec<f64> = filled.iter().map(|v| (v - mean) / sigma).collect();
            let zm = z.iter().sum::<f64>() / n;
            let zs = (z.iter().map(|v| (v - zm).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(zm.abs() < 1e-9, "f64 mean {}", zm);
            prop_assert!((zs - 1.0).abs() < 1e-6, "f64 sigma {}", zs);
            // the stored f32 column matches within rounding
            for (got, want) in out.data.column(d).iter().zip(&z) {
                prop_assert!((*got as f64 - want).abs() < 1e-4 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn model_round_trip_is_bit_exact(
        seed in any::<u64>(),
        kind in 0usize..3,
        raw_bits in prop::collection::vec(any::<u64>(), 0..64),
    ) {
        let spec = match kind {
            0 => ModelSpec::linear(2, 3, 4),
            1 => ModelSpec::mlp(2, 3, 4, 3),
            _ => ModelSpec::lstm(2, 3, 4, 3, 2),
        };
        let mut model = TrainedModel::init(spec, seed).unwrap();
        // overwrite a prefix with arbitrary bit patterns
        for (p, bits) in model.params.iter_mut().zip(&raw_bits) {
            *p = f64::from_bits(*bits);
        }
        let mut bytes = Vec::new();
        forecast::write_model(&model, &mut bytes).unwrap();
        let back = forecast::read_model(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.spec, model.spec);
        prop_assert!(back
            .params
            .iter()
            .zip(&model.params)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn truth_sidecar_round_trips_through_json() {
    use permit_sentry::synth::{GroundTruth, TruthEvent};
    let truth = GroundTruth {
        version: 1,
        events: vec![
            TruthEvent {
                start_tick: 1000,
                duration_ticks: 200,
                class: Some(LabelClass::KRF1),
                raw_label: Some("KRF1 CS Fault".into()),
                precursor_lead_ticks: 45,
                affected_devices: vec![0, 1, 2],
            },
            TruthEvent {
                start_tick: 9000,
                duration_ticks: 60,
                class: None,
                raw_label: None,
                precursor_lead_ticks: 0,
                affected_devices: vec![],
            },
        ],
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("truth.json");
    truth.save(&path).unwrap();
    let back = GroundTruth::load(&path).unwrap();
    assert_eq!(back.version, 1);
    assert_eq!(back.events.len(), 2);
    assert_eq!(back.events[0].class, Some(LabelClass::KRF1));
    assert!(back.events[1].class.is_none());
}
