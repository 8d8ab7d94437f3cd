use super::{ComPtrModel, SamplePair, TaskKind};
use crate::error::{Error, Result};
use crate::metrics::{game_single, rmse_counts, ClassConfusion, ConfusionCounts, MetricReport};
use crate::tensor::Scalar;

/// Per-pixel prediction of one sample in target form: a 0/1 mask
/// (logit ≥ 0), a class index, or a density value.
pub fn predict_map<T: Scalar>(model: &ComPtrModel<T>, sample: &SamplePair) -> Result<Vec<f32>> {
    let out = model.predict(&sample.img1, &sample.img2)?;
    let data = out.data();
    Ok(match model.config.task {
        TaskKind::Binary => data.iter().map(|v| if v.as_f64() >= 0.0 { 1.0 } else { 0.0 }).collect(),
        TaskKind::Density => data.iter().map(|v| v.as_f64() as f32).collect(),
        TaskKind::Multiclass { classes } => data
            .chunks(classes)
            .map(|row| {
                let mut best = 0;
                for (i, v) in row.iter().enumerate() {
                    if v.as_f64() > row[best].as_f64() {
                        best = i;
                    }
                }
                best as f32
            })
            .collect(),
    })
}

/// Dataset-level report of `(prediction, target)` maps for `task`. Binary
/// and class confusion counts are pooled over all pixels before the ratios.
pub fn score_maps(task: TaskKind, maps: &[(Vec<f32>, Vec<f32>)], h: usize, w: usize) -> Result<MetricReport> {
    if maps.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    match task {
        TaskKind::Binary => {
            let mut c = ConfusionCounts::default();
            for (p, g) in maps {
                c.merge(&ConfusionCounts::from_maps(p, g)?);
            }
            Ok(MetricReport::binary(&c))
        }
        TaskKind::Multiclass { classes } => {
            let mut cc = ClassConfusion::new(classes);
            let labels = |m: &[f32]| m.iter().map(|v| *v as usize).collect::<Vec<_>>();
            for (p, g) in maps {
                cc.add_maps(&labels(p), &labels(g))?;
            }
            Ok(MetricReport::segmentation(&cc))
        }
        TaskKind::Density => {
            let mut r = MetricReport::default();
            for level in 0..4u32 {
                let mut total = 0.0;
                for (p, g) in maps {
                    total += game_single(p, g, h, w, level)?;
                }
                r.values.insert(format!("game{level}"), total / maps.len() as f64);
            }
            let count = |m: &[f32]| m.iter().map(|v| *v as f64).sum::<f64>();
            let preds: Vec<f64> = maps.iter().map(|(p, _)| count(p)).collect();
            let gts: Vec<f64> = maps.iter().map(|(_, g)| count(g)).collect();
            r.values.insert("rmse".into(), rmse_counts(&preds, &gts)?);
            r.counts.insert("images".into(), maps.len() as u64);
            Ok(r)
        }
    }
}

pub fn evaluate<T: Scalar>(model: &ComPtrModel<T>, data: &[SamplePair]) -> Result<MetricReport> {
    let mut maps = Vec::with_capacity(data.len());
    for s in data {
        maps.push((predict_map(model, s)?, s.target.data().to_vec()));
    }
    score_maps(model.config.task, &maps, model.config.height, model.config.width)
}
