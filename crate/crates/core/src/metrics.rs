//! Leaf/stem segmentation scores: per-class precision, recall and IoU, overall
//! accuracy and mean IoU.
//!
//! Ratios with a zero denominator are reported as absent (`None`) rather than
//! zero. Plants are pooled by summing confusion counts (micro aggregation)
//! unless macro averaging is requested explicitly.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cloud::Label;
use crate::error::{Error, Result};

/// Row names used in reports, in output order.
pub const ROW_NAMES: [&str; 8] = [
    "Precision - Stem",
    "Recall - Stem",
    "IoU - Stem",
    "Precision - Leaf",
    "Recall - Leaf",
    "IoU - Leaf",
    "Acc",
    "MIoU",
];

/// Two-class confusion counts indexed `[truth][prediction]`, 0 = stem, 1 = leaf.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

fn class_slot(label: Label) -> Option<usize> {
    match label {
        Label::Stem => Some(0),
        Label::Leaf => Some(1),
        Label::Unlabeled => None,
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionMatrix {
    pub fn from_counts(stem: ClassCounts) -> Self {
        // stem is the positive class: TP = stem→stem, FN = stem→leaf, FP = leaf→stem
        ConfusionMatrix {
            counts: [[stem.tp, stem.fn_], [stem.fp, stem.tn]],
        }
    }

    pub fn class(&self, label: Label) -> ClassCounts {
        let c = class_slot(label).expect("scored classes are stem and leaf");
        let o = 1 - c;
        ClassCounts {
            tp: self.counts[c][c],
            fp: self.counts[o][c],
            fn_: self.counts[c][o],
            tn: self.counts[o][o],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1]
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for t in 0..2 {
            for p in 0..2 {
                self.counts[t][p] += other.counts[t][p];
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub iou: Option<f64>,
}

impl ClassScores {
    fn from_counts(c: ClassCounts) -> Self {
        ClassScores {
            precision: ratio(c.tp, c.tp + c.fp),
            recall: ratio(c.tp, c.tp + c.fn_),
            iou: ratio(c.tp, c.tp + c.fp + c.fn_),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub confusion: ConfusionMatrix,
    pub stem: ClassScores,
    pub leaf: ClassScores,
    pub acc: Option<f64>,
    pub miou: Option<f64>,
}

impl SegmentationReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let stem = ClassScores::from_counts(confusion.class(Label::Stem));
        let leaf = ClassScores::from_counts(confusion.class(Label::Leaf));
        let miou = match (stem.iou, leaf.iou) {
            (Some(a), Some(b)) => Some((a + b) / 2.0),
            _ => None,
        };
        SegmentationReport {
            confusion,
            stem,
            leaf,
            acc: ratio(confusion.correct(), confusion.total()),
            miou,
        }
    }

    /// Values in [`ROW_NAMES`] order.
    pub fn rows(&self) -> [(&'static str, Option<f64>); 8] {
        let v = [
            self.stem.precision,
            self.stem.recall,
            self.stem.iou,
            self.leaf.precision,
            self.leaf.recall,
            self.leaf.iou,
            self.acc,
            self.miou,
        ];
        std::array::from_fn(|i| (ROW_NAMES[i], v[i]))
    }

    pub fn get(&self, row: &str) -> Option<f64> {
        self.rows().into_iter().find(|(n, _)| *n == row).and_then(|(_, v)| v)
    }

    /// One `name: value` line per measure, 4 decimal places, `n/a` when undefined.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, v) in self.rows() {
            match v {
                Some(v) => writeln!(s, "{name}: {v:.4}"),
                None => writeln!(s, "{name}: n/a"),
            }
            .expect("string write");
        }
        s
    }

    /// `"name"=value` pairs as a JSON object keyed by row name, plus the raw counts.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (name, v) in self.rows() {
            map.insert(name.to_string(), v.map_or(serde_json::Value::Null, |v| v.into()));
        }
        map.insert(
            "confusion".into(),
            serde_json::to_value(self.confusion).expect("plain data"),
        );
        serde_json::Value::Object(map)
    }
}

/// What to do with points whose truth or prediction is unlabeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnlabeledPolicy {
    #[default]
    Reject,
    Exclude,
}

pub fn confusion(pred: &[Label], truth: &[Label], policy: UnlabeledPolicy) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} ground-truth labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut m = ConfusionMatrix::default();
    for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        match (class_slot(t), class_slot(p)) {
            (Some(t), Some(p)) => m.counts[t][p] += 1,
            _ if policy == UnlabeledPolicy::Exclude => {}
            _ => {
                return Err(Error::InvalidInput(format!(
                    "point {i} is unlabeled (truth {t:?}, prediction {p:?})"
                )))
            }
        }
    }
    Ok(m)
}

pub fn evaluate(pred: &[Label], truth: &[Label], policy: UnlabeledPolicy) -> Result<SegmentationReport> {
    Ok(SegmentationReport::from_confusion(confusion(pred, truth, policy)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Sum confusion counts, then score.
    #[default]
    Micro,
    /// Average each defined per-plant measure.
    Macro,
}

pub fn aggregate(reports: &[SegmentationReport], mode: Aggregation) -> Result<SegmentationReport> {
    if reports.is_empty() {
        return Err(Error::InvalidInput("no reports to aggregate".into()));
    }
    let mut pooled = ConfusionMatrix::default();
    for r in reports {
        pooled.add(&r.confusion);
    }
    let micro = SegmentationReport::from_confusion(pooled);
    if mode == Aggregation::Micro {
        return Ok(micro);
    }
    let mean = |f: &dyn Fn(&SegmentationReport) -> Option<f64>| {
        let vals: Vec<f64> = reports.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Ok(SegmentationReport {
        confusion: pooled,
        stem: ClassScores {
            precision: mean(&|r| r.stem.precision),
            recall: mean(&|r| r.stem.recall),
            iou: mean(&|r| r.stem.iou),
        },
        leaf: ClassScores {
            precision: mean(&|r| r.leaf.precision),
            recall: mean(&|r| r.leaf.recall),
            iou: mean(&|r| r.leaf.iou),
        },
        acc: mean(&|r| r.acc),
        miou: mean(&|r| r.miou),
    })
}
