use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    /// Counts from two 0/1 maps of equal length.
    pub fn from_maps(pred: &[f32], gt: &[f32]) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::invalid(format!("map sizes differ: {} vs {}", pred.len(), gt.len())));
        }
        let mut c = Self::default();
        for (&p, &g) in pred.iter().zip(gt) {
            let (p, g) = (binary(p)?, binary(g)?);
            match (p, g) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn merge(&mut self, other: &Self) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn binary(v: f32) -> Result<bool> {
    if v == 0.0 {
        Ok(false)
    } else if v == 1.0 {
        Ok(true)
    } else {
        Err(Error::invalid(format!("binary map holds value {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub oa: f64,
}

/// A ratio with a zero denominator, reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedFlags {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
    pub iou: bool,
    pub oa: bool,
}

impl UndefinedFlags {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1 || self.iou || self.oa
    }
}

fn ratio(num: u64, den: u64, undefined: &mut bool) -> f64 {
    if den == 0 {
        *undefined = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall, F1 = 2TP/(2TP+FN+FP), IOU = TP/(TP+FP+FN) and overall
/// accuracy.
pub fn binary_metrics(c: &ConfusionCounts) -> (BinaryMetrics, UndefinedFlags) {
    let mut u = UndefinedFlags::default();
    let m = BinaryMetrics {
        precision: ratio(c.tp, c.tp + c.fp, &mut u.precision),
        recall: ratio(c.tp, c.tp + c.fn_, &mut u.recall),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fn_ + c.fp, &mut u.f1),
        iou: ratio(c.tp, c.tp + c.fp + c.fn_, &mut u.iou),
        oa: ratio(c.tp + c.tn, c.total(), &mut u.oa),
    };
    (m, u)
}

/// `pred ≥ threshold` as a 0/1 map.
pub fn binarize(values: &[f32], threshold: f32) -> Vec<f32> {
    values.iter().map(|&v| if v >= threshold { 1.0 } else { 0.0 }).collect()
}
