//! Outage-cause labeling: feature aggregation at the drop tick, a
//! random-forest classifier with vote-fraction confidence, a learned
//! bit-pattern labeler, cross-validation, and labeler-consistency analysis.

mod bits;
mod cv;
mod tree;

pub use bits::{bit_label, compare_labelers, learn_bit_patterns, BitPatternTable, ConsistencyMatrix, Signature};
pub use cv::{cross_validate, macro_f1, CvReport};
pub use tree::{gini_impurity, TreeNode};

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::catalog::{DeviceCatalog, DeviceKind};
use crate::dataset::Instance;
use crate::error::{Error, Result};
use crate::frame::TickMatrix;
use crate::labels::LabelClass;
use crate::rng::{self, tag};

/// Look-back of the aggregation window in ticks (0.4 s at 15 Hz).
pub const AGG_LOOKBACK: usize = 6;

/// Per-device difference between the value at the drop tick and the mean of
/// the preceding `lookback` ticks (sum divided by `k`), over every
/// non-permit device in catalog order.
pub fn aggregate_features_at(
    ticks: &TickMatrix,
    catalog: &DeviceCatalog,
    t_prime: usize,
    lookback: usize,
    k: usize,
) -> Result<Vec<f64>> {
    if lookback == 0 || k == 0 {
        return Err(Error::config("aggregation lookback and k must be >= 1"));
    }
    if t_prime < lookback || t_prime >= ticks.n_ticks() {
        return Err(Error::History(format!(
            "need {lookback} ticks of history ending at {t_prime} in {} ticks",
            ticks.n_ticks()
        )));
    }
    let mut out = Vec::with_capacity(catalog.len());
    for (d, spec) in catalog.devices.iter().enumerate() {
        if spec.kind == DeviceKind::Permit {
            continue;
        }
        let col = ticks.column(d);
        let sum: f64 = col[t_prime - lookback..t_prime].iter().map(|&v| v as f64).sum();
        out.push(col[t_prime] as f64 - sum / k as f64);
    }
    Ok(out)
}

/// [`aggregate_features_at`] anchored at the instance's permit drop.
pub fn aggregate_features(instance: &Instance, lookback: usize, k: usize) -> Result<Vec<f64>> {
    let t_prime = instance
        .drop_offset
        .ok_or_else(|| Error::History("non-outage instance has no drop tick".into()))?;
    aggregate_features_at(&instance.ticks, &instance.catalog, t_prime, lookback, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_samples_split: usize,
    /// Features examined per node; `None` uses `floor(sqrt(n_features))`.
    #[serde(default)]
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 200, min_samples_split: 2, max_features: None, bootstrap: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
    pub classes: Vec<LabelClass>,
    pub n_features: usize,
    pub config: ForestConfig,
}

/// Fits `n_trees` trees on bootstrap samples; per-tree seeds make the result
/// independent of fitting order, so trees run in parallel.
pub fn train_forest(
    features: &[Vec<f64>],
    labels: &[LabelClass],
    cfg: &ForestConfig,
) -> Result<ForestModel> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::invariant("features and labels must be non-empty and equal length"));
    }
    let n_features = features[0].len();
    if features.iter().any(|f| f.len() != n_features) {
        return Err(Error::Shape("feature rows have differing lengths".into()));
    }
    if cfg.n_trees == 0 {
        return Err(Error::config("forest needs at least one tree"));
    }
    let mut classes: Vec<LabelClass> = labels.to_vec();
    classes.sort();
    classes.dedup();
    // a single-class input yields a degenerate forest of pure leaves
    let class_ids: Vec<usize> =
        labels.iter().map(|l| classes.iter().position(|c| c == l).unwrap()).collect();

    let max_features = cfg
        .max_features
        .unwrap_or_else(|| (n_features as f64).sqrt().floor() as usize)
        .clamp(1, n_features);

    let fit_one = |t: usize| {
        let mut rng = rng::stream(cfg.seed, tag::TREE, t as u64);
        tree::fit_tree(
            features,
            &class_ids,
            classes.len(),
            cfg.min_samples_split,
            max_features,
            cfg.bootstrap,
            &mut rng,
        )
    };

    #[cfg(feature = "parallel")]
    let trees: Vec<TreeNode> = (0..cfg.n_trees).into_par_iter().map(fit_one).collect();
    #[cfg(not(feature = "parallel"))]
    let trees: Vec<TreeNode> = (0..cfg.n_trees).map(fit_one).collect();

    Ok(ForestModel { trees, classes, n_features, config: *cfg })
}

/// Single-threaded reference path of [`train_forest`].
pub fn train_forest_seq(
    features: &[Vec<f64>],
    labels: &[LabelClass],
    cfg: &ForestConfig,
) -> Result<ForestModel> {
    let mut classes: Vec<LabelClass> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::invariant("features and labels must be non-empty and equal length"));
    }
    let n_features = features[0].len();
    let class_ids: Vec<usize> =
        labels.iter().map(|l| classes.iter().position(|c| c == l).unwrap()).collect();
    let max_features = cfg
        .max_features
        .unwrap_or_else(|| (n_features as f64).sqrt().floor() as usize)
        .clamp(1, n_features);
    let trees: Vec<TreeNode> = (0..cfg.n_trees)
        .map(|t| {
            let mut rng = rng::stream(cfg.seed, tag::TREE, t as u64);
            tree::fit_tree(
                features,
                &class_ids,
                classes.len(),
                cfg.min_samples_split,
                max_features,
                cfg.bootstrap,
                &mut rng,
            )
        })
        .collect();
    Ok(ForestModel { trees, classes, n_features, config: *cfg })
}

/// Plurality vote over the trees' leaf-majority classes; confidence is the
/// winning vote fraction. Ties break in the fixed class order.
pub fn classify_forest(forest: &ForestModel, features: &[f64]) -> Result<(LabelClass, f64)> {
    if features.len() != forest.n_features {
        return Err(Error::Shape(format!(
            "feature vector has {} entries, forest was trained on {}",
            features.len(),
            forest.n_features
        )));
    }
    let mut votes = vec![0usize; forest.classes.len()];
    for tree in &forest.trees {
        votes[tree.predict(features)] += 1;
    }
    let (best, &n) = votes
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.cmp(b).then(ib.cmp(ia)))
        .expect("non-empty vote table");
    Ok((forest.classes[best], n as f64 / forest.trees.len() as f64))
}

pub const FOREST_MAGIC: [u8; 4] = *b"PSF1";
pub const FOREST_VERSION: u32 = 1;

/// PSF1: magic, u32 version, JSON-encoded forest.
pub fn write_forest<W: Write>(forest: &ForestModel, mut sink: W) -> Result<u64> {
    let body = serde_json::to_vec(forest)?;
    sink.write_all(&FOREST_MAGIC)?;
    sink.write_all(&FOREST_VERSION.to_le_bytes())?;
    sink.write_all(&body)?;
    Ok(8 + body.len() as u64)
}

pub fn read_forest<R: Read>(mut source: R) -> Result<ForestModel> {
    let mut magic = [0u8; 4];
    source.read_exact(&mut magic)?;
    if magic != FOREST_MAGIC {
        return Err(Error::BadMagic { expected: FOREST_MAGIC, got: magic });
    }
    let mut word = [0u8; 4];
    source.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version > FOREST_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let mut body = Vec::new();
    source.read_to_end(&mut body)?;
    Ok(serde_json::from_slice(&body)?)
}

pub fn write_forest_file(forest: &ForestModel, path: impl AsRef<Path>) -> Result<u64> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n = write_forest(forest, &mut w)?;
    w.flush()?;
    Ok(n)
}

pub fn read_forest_file(path: impl AsRef<Path>) -> Result<ForestModel> {
    read_forest(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Features for every labeled outage instance, paired with the labels.
pub fn labeled_features(
    instances: &[Instance],
    lookback: usize,
    k: usize,
) -> Result<(Vec<Vec<f64>>, Vec<LabelClass>)> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for inst in instances {
        if let (Some(label), Some(_)) = (inst.label, inst.drop_offset) {
            features.push(aggregate_features(inst, lookback, k)?);
            labels.push(label);
        }
    }
    Ok((features, labels))
}
