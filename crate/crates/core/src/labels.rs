//! Outage label classes and canonicalization of operator-assigned labels.

use serde::{Deserialize, Serialize};

/// Closed set of outage cause classes. The enum order is the fixed
/// tie-breaking order used by the classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LabelClass {
    KRF1,
    KRF2,
    KRF5,
    LRF,
    Other,
    Unlabeled,
}

impl LabelClass {
    /// The five named classes an automated labeler may assign.
    pub const NAMED: [LabelClass; 5] = [
        LabelClass::KRF1,
        LabelClass::KRF2,
        LabelClass::KRF5,
        LabelClass::LRF,
        LabelClass::Other,
    ];

    /// All classes including `Unlabeled`, in tie-breaking order.
    pub const ALL: [LabelClass; 6] = [
        LabelClass::KRF1,
        LabelClass::KRF2,
        LabelClass::KRF5,
        LabelClass::LRF,
        LabelClass::Other,
        LabelClass::Unlabeled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LabelClass::KRF1 => "KRF1",
            LabelClass::KRF2 => "KRF2",
            LabelClass::KRF5 => "KRF5",
            LabelClass::LRF => "LRF",
            LabelClass::Other => "Other",
            LabelClass::Unlabeled => "Unlabeled",
        }
    }

    /// Raw operator strings known to belong to this class.
    pub fn raw_labels(self) -> &'static [&'static str] {
        match self {
            LabelClass::KRF1 => &["KRF1 CS Fault"],
            LabelClass::KRF2 => &["KRF2 CS Fault"],
            LabelClass::KRF5 => &["KRF5 CS Fault"],
            LabelClass::LRF => &[
                "LRF1 FPGA Trip Sum",
                "LRF1 trip",
                "LRF2 Driver Anode OL",
                "LRF2 reverse power",
                "LRF3 FPGA trip",
                "LRF3 FPGA trip sum",
                "L3 O/I Trip",
                "L3 Spark Trip",
                "L3 ZOV Driver trip",
                "L3 ZOV V",
                "L3 ZOV Voltage Trip",
                "L3 ZOV driver voltage",
                "L3 ZOV driver/voltage trip",
                "L4 High Voltage off",
                "L4 VXI reboot",
            ],
            LabelClass::Other => &[
                "KRF4 Gun Spark",
                "KRF6 CS Fault",
                "KRF6 reflected power fault",
                "L:QPS312 issues",
                "Roof leak on KRF7 PFN",
            ],
            LabelClass::Unlabeled => &[],
        }
    }
}

impl std::fmt::Display for LabelClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn normalize(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Case-insensitive, whitespace-normalized lookup of an operator label.
/// Unknown strings fall back to `Other`. Total and deterministic.
pub fn canonicalize_label(raw: &str) -> LabelClass {
    let key = normalize(raw);
    for class in LabelClass::NAMED {
        if class.raw_labels().iter().any(|r| normalize(r) == key) {
            return class;
        }
    }
    LabelClass::Other
}
