//! End-to-end checks of the synth -> preprocess -> extract -> window chain
//! against the generator's own ground truth.

use std::collections::BTreeMap;

use permit_sentry::dataset::{
    self, extract_nonoutage_instances, extract_outage_instances, Geometry, InstanceKind,
};
use permit_sentry::labels::LabelClass;
use permit_sentry::preprocess::preprocess_frame;
use permit_sentry::synth::{self, default_templates, NoiseConfig, SynthConfig};

fn small_corpus_config(hours: usize, outages: f64, fluctuations: f64, seed: u64) -> SynthConfig {
    SynthConfig {
        n_reading: 6,
        n_setting: 2,
        n_status: 5,
        hours,
        outage_rate_per_hour: outages,
        fluctuation_rate_per_hour: fluctuations,
        quiet_tail_hours: 0,
        templates: default_templates(6, 5),
        noise: NoiseConfig::default(),
        seed,
    }
}

#[test]
fn extraction_recovers_exactly_the_scheduled_outages() {
    let cfg = small_corpus_config(4, 3.0, 7.5, 1234);
    let (frames, truth) = synth::generate_corpus(&cfg).unwrap();
    assert_eq!(truth.outages().count(), 12);
    assert_eq!(truth.fluctuations().count(), 30);

    let preprocessed: Vec<_> =
        frames.iter().map(|f| preprocess_frame(f).unwrap()).collect();
    let instances = extract_outage_instances(&preprocessed, None).unwrap();
    assert_eq!(instances.len(), 12, "every scheduled outage is recovered");

    let mut want: Vec<u64> = truth.outages().map(|e| e.start_tick).collect();
    want.sort();
    let mut got: Vec<u64> =
        instances.iter().map(|i| i.global_drop_tick().unwrap()).collect();
    got.sort();
    assert_eq!(got, want, "drop ticks match the ground truth exactly");

    for inst in &instances {
        assert_eq!(inst.kind, InstanceKind::Outage);
        assert_eq!(inst.drop_offset, Some(450));
        let p = inst.catalog.target_permit(None).unwrap();
        let permit = inst.permit_column(p);
        assert_eq!(permit[449], 1.0);
        assert_eq!(permit[450], 0.0);
    }
}

#[test]
fn nonoutage_cropping_respects_the_per_file_cap() {
    let cfg = small_corpus_config(3, 1.0, 2.0, 77);
    let (frames, _) = synth::generate_corpus(&cfg).unwrap();
    let preprocessed: Vec<_> =
        frames.iter().map(|f| preprocess_frame(f).unwrap()).collect();
    let instances = extract_nonoutage_instances(&preprocessed, None).unwrap();
    let mut per_file: BTreeMap<&str, usize> = BTreeMap::new();
    for inst in &instances {
        assert_eq!(inst.kind, InstanceKind::NonOutage);
        let p = inst.catalog.target_permit(None).unwrap();
        assert!(inst.permit_column(p).iter().all(|&v| v == 1.0));
        *per_file.entry(inst.source_file.as_str()).or_insert(0) += 1;
    }
    assert!(per_file.values().all(|&n| n <= 1), "at most one crop per file");
}

#[test]
fn window_counts_match_brute_force_over_the_sensitivity_grid() {
    let cfg = small_corpus_config(1, 1.0, 0.0, 5);
    let (frames, _) = synth::generate_corpus(&cfg).unwrap();
    let preprocessed: Vec<_> =
        frames.iter().map(|f| preprocess_frame(f).unwrap()).collect();
    let instances = extract_outage_instances(&preprocessed, None).unwrap();
    let instance = &instances[0];

    for lookback in [30usize, 45, 60, 90] {
        for gap in [0usize, 15, 30, 60] {
            let g = Geometry::new(lookback, gap, 60);
            let windows = dataset::make_windows(instance, g, 1, None).unwrap();
            // brute force: every start whose full span fits
            let brute = (0..600)
                .filter(|start| start + lookback + gap + 60 <= 600)
                .count();
            assert_eq!(windows.len(), brute, "lookback {lookback} gap {gap}");
            assert_eq!(windows.len(), g.window_count(600, 1));
        }
    }
}

#[test]
fn truth_labels_attach_to_extracted_instances() {
    let cfg = small_corpus_config(2, 2.5, 0.0, 9);
    let (frames, truth) = synth::generate_corpus(&cfg).unwrap();
    let preprocessed: Vec<_> =
        frames.iter().map(|f| preprocess_frame(f).unwrap()).collect();
    let mut instances = extract_outage_instances(&preprocessed, None).unwrap();
    dataset::label_from_truth(&mut instances, &truth);
    for inst in &instances {
        let event = truth
            .events
            .iter()
            .find(|e| e.start_tick == inst.global_drop_tick().unwrap())
            .unwrap();
        assert_eq!(inst.label, event.class);
        assert_ne!(inst.label, Some(LabelClass::Unlabeled));
        // raw labels canonicalize back to the class
        let raw = event.raw_label.as_deref().unwrap();
        assert_eq!(permit_sentry::labels::canonicalize_label(raw), event.class.unwrap());
    }
}
