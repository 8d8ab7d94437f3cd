use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `matrix[i · n + j]` counts pixels of class `i` predicted as class `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassConfusion {
    pub n_cls: usize,
    pub matrix: Vec<u64>,
}

impl ClassConfusion {
    pub fn new(n_cls: usize) -> Self {
        Self {
            n_cls,
            matrix: vec![0; n_cls * n_cls],
        }
    }

    pub fn from_rows(rows: &[&[u64]]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("confusion matrix must be square"));
        }
        Ok(Self {
            n_cls: n,
            matrix: rows.concat(),
        })
    }

    pub fn add_maps(&mut self, pred: &[usize], gt: &[usize]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::invalid("label maps differ in size"));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if p >= self.n_cls || g >= self.n_cls {
                return Err(Error::invalid(format!("class index out of range for {} classes", self.n_cls)));
            }
            self.matrix[g * self.n_cls + p] += 1;
        }
        Ok(())
    }

    pub fn at(&self, i: usize, j: usize) -> u64 {
        self.matrix[i * self.n_cls + j]
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMetrics {
    pub pixel_acc: f64,
    pub mean_acc: f64,
    pub mean_iou: f64,
}

/// Pixel accuracy, mean per-class accuracy and mean IOU. Classes with no
/// ground-truth pixels are left out of the mean accuracy; classes absent from
/// both prediction and ground truth are left out of the mean IOU.
pub fn segmentation_metrics(cc: &ClassConfusion) -> SegmentationMetrics {
    let n = cc.n_cls;
    let total = cc.total();
    let diag: u64 = (0..n).map(|i| cc.at(i, i)).sum();
    let (mut acc_sum, mut acc_n, mut iou_sum, mut iou_n) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        let row: u64 = (0..n).map(|k| cc.at(i, k)).sum();
        let col: u64 = (0..n).map(|k| cc.at(k, i)).sum();
        if row > 0 {
            acc_sum += cc.at(i, i) as f64 / row as f64;
            acc_n += 1;
        }
        let union = row + col - cc.at(i, i);
        if union > 0 {
            iou_sum += cc.at(i, i) as f64 / union as f64;
            iou_n += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    SegmentationMetrics {
        pixel_acc: if total == 0 { 0.0 } else { diag as f64 / total as f64 },
        mean_acc: mean(acc_sum, acc_n),
        mean_iou: mean(iou_sum, iou_n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        let m = segmentation_metrics(&ClassConfusion::from_rows(&[&[3, 1], &[1, 3]]).unwrap());
        assert_eq!((m.pixel_acc, m.mean_acc, m.mean_iou), (0.75, 0.75, 0.6));
        let m = segmentation_metrics(&ClassConfusion::from_rows(&[&[4, 0, 0], &[0, 2, 0], &[0, 0, 0]]).unwrap());
        assert_eq!((m.pixel_acc, m.mean_acc, m.mean_iou), (1.0, 1.0, 1.0));
    }

    #[test]
    fn missed_class_scores_zero_iou() {
        // class 1 is always predicted as class 0
        let m = segmentation_metrics(&ClassConfusion::from_rows(&[&[5, 0], &[2, 0]]).unwrap());
        assert!((m.mean_iou - (5.0 / 7.0) / 2.0).abs() < 1e-15);
        assert!((m.mean_acc - 0.5).abs() < 1e-15);
    }
}
