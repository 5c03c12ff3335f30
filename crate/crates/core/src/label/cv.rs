//! Repeated stratified k-fold cross-validation with macro-F1 and a pooled
//! confusion matrix.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{classify_forest, train_forest, ForestConfig};
use crate::error::{Error, Result};
use crate::labels::LabelClass;
use crate::rng::{self, tag};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub version: u32,
    pub folds: usize,
    pub repeats: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub classes: Vec<String>,
    /// Pooled counts over every repeat; rows are true classes, columns
    /// predicted classes.
    pub confusion: Vec<Vec<usize>>,
}

impl CvReport {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }
}

/// Unweighted mean of per-class F1 scores; a class with an all-zero
/// denominator contributes 0.
pub fn macro_f1(confusion: &[Vec<usize>]) -> f64 {
    let k = confusion.len();
    if k == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for c in 0..k {
        let tp = confusion[c][c];
        let fp: usize = (0..k).filter(|&r| r != c).map(|r| confusion[r][c]).sum();
        let fn_: usize = (0..k).filter(|&p| p != c).map(|p| confusion[c][p]).sum();
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            sum += 2.0 * tp as f64 / denom as f64;
        }
    }
    sum / k as f64
}

/// Deals shuffled per-class index groups round-robin into folds; fold sizes
/// differ by at most one and every class spreads as evenly as possible.
pub(super) fn stratified_folds(
    class_ids: &[usize],
    n_classes: usize,
    folds: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<usize> {
    let mut fold_of = vec![0usize; class_ids.len()];
    let mut cursor = 0usize;
    for class in 0..n_classes {
        let mut members: Vec<usize> =
            (0..class_ids.len()).filter(|&i| class_ids[i] == class).collect();
        members.shuffle(rng);
        for idx in members {
            fold_of[idx] = cursor % folds;
            cursor += 1;
        }
    }
    fold_of
}

/// Repeated stratified-as-possible k-fold cross-validation. Each repeat
/// reshuffles, trains on `folds - 1` folds, tests on the held-out fold, and
/// scores the pooled predictions of the repeat; means and (population)
/// standard deviations are over repeats.
pub fn cross_validate(
    features: &[Vec<f64>],
    labels: &[LabelClass],
    folds: usize,
    repeats: usize,
    cfg: &ForestConfig,
) -> Result<CvReport> {
    let n = features.len();
    if n == 0 || n != labels.len() {
        return Err(Error::invariant("features and labels must be non-empty and equal length"));
    }
    if folds < 2 || folds > n {
        return Err(Error::config(format!("folds must lie in [2, {n}], got {folds}")));
    }
    if repeats == 0 {
        return Err(Error::config("repeats must be >= 1"));
    }

    let mut classes: Vec<LabelClass> = labels.to_vec();
    classes.sort();
    classes.dedup();
    let k = classes.len();
    let class_ids: Vec<usize> =
        labels.iter().map(|l| classes.iter().position(|c| c == l).unwrap()).collect();

    let mut accuracies = Vec::with_capacity(repeats);
    let mut f1s = Vec::with_capacity(repeats);
    let mut pooled = vec![vec![0usize; k]; k];

    for repeat in 0..repeats {
        let mut rng = rng::stream(cfg.seed, tag::CV, repeat as u64);
        let fold_of = stratified_folds(&class_ids, k, folds, &mut rng);

        let mut confusion = vec![vec![0usize; k]; k];
        for fold in 0..folds {
            let train_idx: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
            let test_idx: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
            if test_idx.is_empty() {
                continue;
            }
            let train_features: Vec<Vec<f64>> =
                train_idx.iter().map(|&i| features[i].clone()).collect();
            let train_labels: Vec<LabelClass> = train_idx.iter().map(|&i| labels[i]).collect();
            let fold_cfg = ForestConfig {
                seed: rng::mix(cfg.seed, tag::CV, (repeat * folds + fold) as u64 + 1),
                ..*cfg
            };
            let forest = train_forest(&train_features, &train_labels, &fold_cfg)?;
            for &i in &test_idx {
                let (pred, _) = classify_forest(&forest, &features[i])?;
                // a fold's forest may not know every global class
                let pred_id = classes.iter().position(|c| *c == pred).unwrap();
                confusion[class_ids[i]][pred_id] += 1;
            }
        }
        let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
        let total: usize = confusion.iter().map(|row| row.iter().sum::<usize>()).sum();
        accuracies.push(correct as f64 / total as f64);
        f1s.push(macro_f1(&confusion));
        for (p, c) in pooled.iter_mut().zip(&confusion) {
            for (a, b) in p.iter_mut().zip(c) {
                *a += b;
            }
        }
    }

    let (accuracy_mean, accuracy_std) = mean_std(&accuracies);
    let (macro_f1_mean, macro_f1_std) = mean_std(&f1s);
    Ok(CvReport {
        version: 1,
        folds,
        repeats,
        accuracy_mean,
        accuracy_std,
        macro_f1_mean,
        macro_f1_std,
        classes: classes.iter().map(|c| c.name().to_string()).collect(),
        confusion: pooled,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Clusters by class membership for report axes.
pub fn class_distribution(labels: &[LabelClass]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for l in labels {
        *out.entry(l.name().to_string()).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_sizes_are_even_for_eighty_over_eight() {
        let class_ids: Vec<usize> = (0..80).map(|i| i % 5).collect();
        let mut rng = rng::stream(3, tag::CV, 0);
        let fold_of = stratified_folds(&class_ids, 5, 8, &mut rng);
        let mut sizes = vec![0usize; 8];
        for &f in &fold_of {
            sizes[f] += 1;
        }
        assert_eq!(sizes, vec![10; 8]);
    }

    #[test]
    fn macro_f1_matches_hand_computation() {
        // rows true, cols predicted
        let confusion = vec![vec![5, 1, 0], vec![2, 3, 1], vec![0, 0, 4]];
        // class 0: tp 5, fp 2, fn 1 -> f1 10/13
        // class 1: tp 3, fp 1, fn 3 -> f1 6/10
        // class 2: tp 4, fp 1, fn 0 -> f1 8/9
        let want = (10.0 / 13.0 + 6.0 / 10.0 + 8.0 / 9.0) / 3.0;
        assert!((macro_f1(&confusion) - want).abs() < 1e-12);
        // absent class contributes zero
        let with_empty = vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 0]];
        assert!((macro_f1(&with_empty) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn separable_five_class_set_cross_validates_cleanly() {
        let classes = LabelClass::NAMED;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (j, &class) in classes.iter().enumerate() {
            for s in 0..16 {
                let mut row = vec![0.05 * (s % 4) as f64; 5];
                row[j] += 8.0;
                features.push(row);
                labels.push(class);
            }
        }
        let cfg = ForestConfig { n_trees: 60, seed: 5, ..ForestConfig::default() };
        let report = cross_validate(&features, &labels, 8, 3, &cfg).unwrap();
        assert!(report.accuracy_mean >= 0.95, "accuracy {}", report.accuracy_mean);
        assert!(report.macro_f1_mean >= 0.90, "macro f1 {}", report.macro_f1_mean);
        assert_eq!(report.classes.len(), 5);
        let total: usize = report.confusion.iter().flatten().sum();
        assert_eq!(total, 80 * 3);
    }

    #[test]
    fn cv_rejects_bad_fold_counts() {
        let features = vec![vec![0.0]; 5];
        let labels = vec![LabelClass::KRF1; 5];
        let cfg = ForestConfig::default();
        assert!(cross_validate(&features, &labels, 8, 1, &cfg).is_err());
        assert!(cross_validate(&features, &labels, 1, 1, &cfg).is_err());
    }

    #[test]
    fn report_schema_carries_the_paper_shape() {
        let report = CvReport {
            version: 1,
            folds: 8,
            repeats: 100,
            accuracy_mean: 0.821,
            accuracy_std: 0.021,
            macro_f1_mean: 0.691,
            macro_f1_std: 0.018,
            classes: vec!["KRF1".into(), "KRF2".into()],
            confusion: vec![vec![1, 0], vec![0, 1]],
        };
        let json: serde_json::Value =
            serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
        for key in [
            "version",
            "folds",
            "repeats",
            "accuracy_mean",
            "accuracy_std",
            "macro_f1_mean",
            "macro_f1_std",
            "classes",
            "confusion",
        ] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert_eq!(json["accuracy_mean"], 0.821);
    }
}
