//! Evaluation metrics for change detection, counting, segmentation and
//! saliency.

pub mod binary;
pub mod counting;
pub mod saliency;
pub mod segmentation;

pub use binary::{binarize, binary_metrics, BinaryMetrics, ConfusionCounts, UndefinedFlags};
pub use counting::{cell_counts, game, game_single, grid_bounds, rmse_counts};
pub use saliency::{max_e_measure, s_measure, saliency_metrics, SaliencyMetrics};
pub use segmentation::{segmentation_metrics, ClassConfusion, SegmentationMetrics};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Named metric values plus the raw counts they derive from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub values: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, u64>,
    /// Metrics whose denominator was zero (reported as 0).
    pub undefined: Vec<String>,
}

impl MetricReport {
    pub fn binary(c: &ConfusionCounts) -> Self {
        let (m, u) = binary_metrics(c);
        let mut r = Self::default();
        for (name, v, undef) in [
            ("precision", m.precision, u.precision),
            ("recall", m.recall, u.recall),
            ("f1", m.f1, u.f1),
            ("iou", m.iou, u.iou),
            ("oa", m.oa, u.oa),
        ] {
            r.values.insert(name.into(), v);
            if undef {
                r.undefined.push(name.into());
            }
        }
        for (name, v) in [("tp", c.tp), ("tn", c.tn), ("fp", c.fp), ("fn", c.fn_)] {
            r.counts.insert(name.into(), v);
        }
        r
    }

    pub fn segmentation(cc: &ClassConfusion) -> Self {
        let m = segmentation_metrics(cc);
        let mut r = Self::default();
        r.values.insert("pixel_acc".into(), m.pixel_acc);
        r.values.insert("mean_acc".into(), m.mean_acc);
        r.values.insert("mean_iou".into(), m.mean_iou);
        r.counts.insert("pixels".into(), cc.total());
        r.counts.insert("correct".into(), (0..cc.n_cls).map(|i| cc.at(i, i)).sum());
        r
    }

    pub fn saliency(m: &SaliencyMetrics) -> Self {
        let mut r = Self::default();
        r.values.insert("s_measure".into(), m.s_measure);
        r.values.insert("max_f".into(), m.max_f);
        r.values.insert("max_e".into(), m.max_e);
        r.values.insert("mae".into(), m.mae);
        r
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }
}
