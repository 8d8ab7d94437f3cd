//! Salient object detection scores. Predictions are in `[0, 1]`, ground
//! truth is 0/1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EPS: f64 = f64::EPSILON;
pub const NUM_THRESHOLDS: usize = 256;
pub const BETA_SQ: f64 = 0.3;
/// Weight of the object-aware term in the structure measure.
pub const STRUCTURE_ALPHA: f64 = 0.5;

/// Thresholds `k / 255`, `k = 0..=255`.
pub fn thresholds() -> Vec<f64> {
    (0..NUM_THRESHOLDS).map(|k| k as f64 / 255.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMetrics {
    pub s_measure: f64,
    pub max_f: f64,
    pub max_e: f64,
    pub mae: f64,
}

fn check(pred: &[f32], gt: &[f32], h: usize, w: usize) -> Result<()> {
    if pred.len() != h * w || gt.len() != h * w {
        return Err(Error::invalid(format!("saliency maps must both be {h}×{w}")));
    }
    if pred.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("saliency prediction must lie in [0, 1]"));
    }
    if gt.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("saliency ground truth must be 0/1"));
    }
    Ok(())
}

pub fn mae(pred: &[f32], gt: &[f32]) -> f64 {
    pred.iter().zip(gt).map(|(p, g)| (*p as f64 - *g as f64).abs()).sum::<f64>() / pred.len().max(1) as f64
}

fn mean(xs: impl Iterator<Item = f64>) -> (f64, usize) {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (if n == 0 { 0.0 } else { s / n as f64 }, n)
}

/// Foreground similarity of `values` (the prediction restricted to one side).
fn object_score(values: &[f64]) -> f64 {
    let (x, n) = mean(values.iter().copied());
    let var = if n > 1 {
        values.iter().map(|v| (v - x).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    2.0 * x / (x * x + 1.0 + var.sqrt() + EPS)
}

fn s_object(pred: &[f64], gt: &[f64]) -> f64 {
    let fg: Vec<f64> = pred.iter().zip(gt).filter(|(_, g)| **g == 1.0).map(|(p, _)| *p).collect();
    let bg: Vec<f64> = pred.iter().zip(gt).filter(|(_, g)| **g == 0.0).map(|(p, _)| 1.0 - *p).collect();
    let u = fg.len() as f64 / gt.len() as f64;
    u * object_score(&fg) + (1.0 - u) * object_score(&bg)
}

fn ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    if pred.is_empty() {
        return 0.0;
    }
    let x = pred.iter().sum::<f64>() / n;
    let y = gt.iter().sum::<f64>() / n;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxy = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        sx += (p - x).powi(2);
        sy += (g - y).powi(2);
        sxy += (p - x) * (g - y);
    }
    let d = n - 1.0 + EPS;
    let (sx, sy, sxy) = (sx / d, sy / d, sxy / d);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn region(map: &[f64], w: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for y in rows {
        out.extend_from_slice(&map[y * w + cols.start..y * w + cols.end]);
    }
    out
}

fn s_region(pred: &[f64], gt: &[f64], h: usize, w: usize) -> f64 {
    let total: f64 = gt.iter().sum();
    let (cx, cy) = if total == 0.0 {
        ((w as f64 / 2.0).round() as usize, (h as f64 / 2.0).round() as usize)
    } else {
        let (mut sx, mut sy) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                sx += gt[y * w + x] * x as f64;
                sy += gt[y * w + x] * y as f64;
            }
        }
        // split after the centroid pixel
        (((sx / total).round() as usize + 1).min(w), ((sy / total).round() as usize + 1).min(h))
    };
    let area = (h * w) as f64;
    let quads = [(0..cy, 0..cx), (0..cy, cx..w), (cy..h, 0..cx), (cy..h, cx..w)];
    quads
        .iter()
        .map(|(r, c)| {
            let weight = (r.len() * c.len()) as f64 / area;
            if weight == 0.0 {
                return 0.0;
            }
            weight * ssim(&region(pred, w, r.clone(), c.clone()), &region(gt, w, r.clone(), c.clone()))
        })
        .sum()
}

/// Structure measure: object-aware and region-aware similarity averaged.
pub fn s_measure(pred: &[f32], gt: &[f32], h: usize, w: usize) -> Result<f64> {
    check(pred, gt, h, w)?;
    let p: Vec<f64> = pred.iter().map(|&v| v as f64).collect();
    let g: Vec<f64> = gt.iter().map(|&v| v as f64).collect();
    let fg = g.iter().sum::<f64>() / g.len() as f64;
    let q = if fg == 0.0 {
        1.0 - p.iter().sum::<f64>() / p.len() as f64
    } else if fg == 1.0 {
        p.iter().sum::<f64>() / p.len() as f64
    } else {
        STRUCTURE_ALPHA * s_object(&p, &g) + (1.0 - STRUCTURE_ALPHA) * s_region(&p, &g, h, w)
    };
    Ok(q.max(0.0))
}

/// F-measure with `β² = 0.3` at each threshold `k / 255` of `pred ≥ t`.
pub fn f_curve(pred: &[f32], gt: &[f32]) -> Vec<f64> {
    let mut fg: Vec<f64> = Vec::new();
    let mut bg: Vec<f64> = Vec::new();
    for (&p, &g) in pred.iter().zip(gt) {
        if g == 1.0 { &mut fg } else { &mut bg }.push(p as f64);
    }
    fg.sort_by(f64::total_cmp);
    bg.sort_by(f64::total_cmp);
    let at_least = |xs: &[f64], t: f64| (xs.len() - xs.partition_point(|v| *v < t)) as f64;
    thresholds()
        .into_iter()
        .map(|t| {
            let tp = at_least(&fg, t);
            let fp = at_least(&bg, t);
            let fnn = fg.len() as f64 - tp;
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let recall = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
            let den = BETA_SQ * precision + recall;
            if den > 0.0 {
                (1.0 + BETA_SQ) * precision * recall / den
            } else {
                0.0
            }
        })
        .collect()
}

/// Enhanced alignment of a 0/1 map against the ground truth. The sum is
/// divided by the pixel count so a perfect map scores exactly 1.
pub fn enhanced_alignment(bin: &[f64], gt: &[f64]) -> f64 {
    let n = gt.len() as f64;
    let fg = gt.iter().sum::<f64>();
    let sum: f64 = if fg == 0.0 {
        bin.iter().map(|b| 1.0 - b).sum()
    } else if fg == n {
        bin.iter().sum()
    } else {
        let mp = bin.iter().sum::<f64>() / n;
        let mg = fg / n;
        bin.iter()
            .zip(gt)
            .map(|(b, g)| {
                let (a, c) = (b - mp, g - mg);
                let align = 2.0 * a * c / (a * a + c * c + EPS);
                (align + 1.0).powi(2) / 4.0
            })
            .sum()
    };
    sum / n
}

pub fn max_e_measure(pred: &[f32], gt: &[f32]) -> f64 {
    let g: Vec<f64> = gt.iter().map(|&v| v as f64).collect();
    thresholds()
        .into_iter()
        .map(|t| {
            let bin: Vec<f64> = pred.iter().map(|&p| if p as f64 >= t { 1.0 } else { 0.0 }).collect();
            enhanced_alignment(&bin, &g)
        })
        .fold(0.0, f64::max)
}

pub fn saliency_metrics(pred: &[f32], gt: &[f32], h: usize, w: usize) -> Result<SaliencyMetrics> {
    check(pred, gt, h, w)?;
    Ok(SaliencyMetrics {
        s_measure: s_measure(pred, gt, h, w)?,
        max_f: f_curve(pred, gt).into_iter().fold(0.0, f64::max),
        max_e: max_e_measure(pred, gt),
        mae: mae(pred, gt),
    })
}
