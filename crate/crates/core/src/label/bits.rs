//! The bit-pattern labeler: learns which status bits flip within two
//! seconds of a drop for each outage class, then labels new outages by
//! matching the observed flip mask. Ambiguity or no match means abstention.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{aggregate_features, classify_forest, ForestModel};
use crate::catalog::DeviceKind;
use crate::dataset::{Instance, InstanceKind};
use crate::error::{Error, Result};
use crate::labels::LabelClass;

/// Ticks after the drop searched for bit flips: 2 s at 15 Hz.
pub const FLIP_WINDOW_TICKS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    /// Catalog index of the status device.
    pub device: usize,
    pub mask: u32,
}

/// Class -> discriminating bit signatures. Classes with no signature are
/// unmatchable and never assigned by [`bit_label`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitPatternTable {
    pub version: u32,
    pub signatures: BTreeMap<LabelClass, Vec<Signature>>,
}

impl BitPatternTable {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

fn status_value_bits(v: f32) -> Result<u32> {
    let rounded = v.round();
    if !(0.0..16_777_216.0).contains(&rounded) || (v - rounded).abs() > 1e-3 {
        return Err(Error::invariant(format!(
            "status value {v} is not an exact non-negative integer below 2^24"
        )));
    }
    Ok(rounded as u32)
}

/// OR over `[t', t' + 30]` of `status XOR status(t' - 1)`, per status device.
fn flip_masks(instance: &Instance) -> Result<BTreeMap<usize, u32>> {
    let t_prime = instance
        .drop_offset
        .ok_or_else(|| Error::History("bit labeling needs an outage drop tick".into()))?;
    if t_prime == 0 {
        return Err(Error::History("drop tick has no pre-drop status sample".into()));
    }
    let end = (t_prime + FLIP_WINDOW_TICKS).min(instance.ticks.n_ticks() - 1);
    let mut masks = BTreeMap::new();
    for d in instance.catalog.indices_of(DeviceKind::StatusBits) {
        let col = instance.ticks.column(d);
        let pre = status_value_bits(col[t_prime - 1])?;
        let mut flips = 0u32;
        for &v in &col[t_prime..=end] {
            flips |= status_value_bits(v)? ^ pre;
        }
        masks.insert(d, flips);
    }
    Ok(masks)
}

/// Learns per-class signatures from labeled outages: a bit qualifies when it
/// flips in every instance of the class and in no instance of any other
/// class.
pub fn learn_bit_patterns(instances: &[Instance]) -> Result<BitPatternTable> {
    let mut per_class: BTreeMap<LabelClass, Vec<BTreeMap<usize, u32>>> = BTreeMap::new();
    for inst in instances {
        if inst.kind != InstanceKind::Outage {
            continue;
        }
        if let Some(label) = inst.label {
            per_class.entry(label).or_default().push(flip_masks(inst)?);
        }
    }

    let devices: Vec<usize> = per_class
        .values()
        .flatten()
        .flat_map(|m| m.keys().copied())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut signatures = BTreeMap::new();
    for (&class, masks) in &per_class {
        let mut sigs = Vec::new();
        for &d in &devices {
            // bits flipped in every instance of this class
            let common = masks.iter().fold(u32::MAX, |acc, m| acc & m.get(&d).copied().unwrap_or(0));
            // bits flipped anywhere in other classes
            let other: u32 = per_class
                .iter()
                .filter(|(c, _)| **c != class)
                .flat_map(|(_, ms)| ms.iter())
                .fold(0, |acc, m| acc | m.get(&d).copied().unwrap_or(0));
            let mask = common & !other;
            if mask != 0 {
                sigs.push(Signature { device: d, mask });
            }
        }
        if !sigs.is_empty() {
            signatures.insert(class, sigs);
        }
    }
    Ok(BitPatternTable { version: 1, signatures })
}

/// Matches the observed flip mask against the table: a unique class whose
/// every signature bit flipped wins; zero or multiple matches abstain.
pub fn bit_label(instance: &Instance, table: &BitPatternTable) -> Result<LabelClass> {
    let observed = flip_masks(instance)?;
    let mut matched: Option<LabelClass> = None;
    for (&class, sigs) in &table.signatures {
        let hit = sigs
            .iter()
            .all(|s| observed.get(&s.device).copied().unwrap_or(0) & s.mask == s.mask);
        if hit {
            if matched.is_some() {
                return Ok(LabelClass::Unlabeled);
            }
            matched = Some(class);
        }
    }
    Ok(matched.unwrap_or(LabelClass::Unlabeled))
}

/// Cross-tabulation of forest labels (rows) against bit labels (columns)
/// over the six classes including `Unlabeled`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyMatrix {
    pub version: u32,
    pub classes: Vec<String>,
    pub matrix: Vec<Vec<usize>>,
    pub total: usize,
    pub diagonal_fraction: f64,
}

impl ConsistencyMatrix {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }
}

/// Runs both labelers over every outage instance and cross-tabulates.
pub fn compare_labelers(
    instances: &[Instance],
    forest: &ForestModel,
    table: &BitPatternTable,
    agg_lookback: usize,
    agg_k: usize,
) -> Result<ConsistencyMatrix> {
    let idx_of = |c: LabelClass| LabelClass::ALL.iter().position(|x| *x == c).unwrap();
    let mut matrix = vec![vec![0usize; LabelClass::ALL.len()]; LabelClass::ALL.len()];
    let mut total = 0usize;
    for inst in instances {
        if inst.kind != InstanceKind::Outage {
            continue;
        }
        let features = aggregate_features(inst, agg_lookback, agg_k)?;
        let (rf, _) = classify_forest(forest, &features)?;
        let bits = bit_label(inst, table)?;
        matrix[idx_of(rf)][idx_of(bits)] += 1;
        total += 1;
    }
    let diagonal: usize = (0..LabelClass::ALL.len()).map(|i| matrix[i][i]).sum();
    Ok(ConsistencyMatrix {
        version: 1,
        classes: LabelClass::ALL.iter().map(|c| c.name().to_string()).collect(),
        matrix,
        total,
        diagonal_fraction: if total > 0 { diagonal as f64 / total as f64 } else { 0.0 },
    })
}
