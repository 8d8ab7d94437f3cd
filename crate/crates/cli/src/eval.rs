use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use clap::Args;
use comptr::data::{load_dataset, pgm};
use comptr::metrics::{
    binary_metrics, game_single, saliency_metrics, segmentation_metrics, ClassConfusion, ConfusionCounts,
};
use comptr::model::{checkpoint, predict_map, score_maps, ComPtrModel, TaskKind};
use comptr::tensor::{io, Tensor};
use serde::{Deserialize, Serialize};

use crate::config;

pub const AGGREGATE_ROW: &str = "ALL";

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    /// change | density | multiclass | saliency; checked against the inputs when given.
    #[arg(long)]
    pub task: Option<String>,
    /// Checkpoint directory (model mode).
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Dataset directory (model mode).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Pairs manifest JSON listing prediction/ground-truth files (pairs mode).
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Output CSV: one row per image, then an `ALL` row.
    ///
    /// Columns by task:
    ///   binary:     image,tp,fp,fn,tn,precision,recall,f1,iou,oa,undefined
    ///   density:    image,pred_count,gt_count,game0,game1,game2,game3,rmse
    ///   multiclass: image,pixels,correct,pixel_acc,mean_acc,mean_iou
    ///   saliency:   image,s_measure,max_f,max_e,mae
    #[arg(long, verbatim_doc_comment)]
    pub out: Option<PathBuf>,
    /// JSON file with any of these options; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTask {
    Model(TaskKind),
    Saliency,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub pred: PathBuf,
    pub gt: PathBuf,
}

/// `task`: binary | density | multiclass | saliency. PGM values are read as
/// `byte / 255`; densities are multiplied by `density_scale`, class maps use
/// the raw byte as the class index. `.cpt` files are used as stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsManifest {
    pub task: String,
    #[serde(default)]
    pub classes: Option<usize>,
    #[serde(default = "one")]
    pub density_scale: f32,
    pub pairs: Vec<PairEntry>,
}

fn one() -> f32 {
    1.0
}

pub fn parse_task(s: &str, classes: Option<usize>) -> anyhow::Result<EvalTask> {
    Ok(match s {
        "change" | "binary" => EvalTask::Model(TaskKind::Binary),
        "density" => EvalTask::Model(TaskKind::Density),
        "multiclass" => EvalTask::Model(TaskKind::Multiclass {
            classes: classes.context("multiclass evaluation needs `classes`")?,
        }),
        "saliency" => EvalTask::Saliency,
        other => bail!("unknown task {other:?}"),
    })
}

pub struct Item {
    pub name: String,
    pub pred: Vec<f32>,
    pub gt: Vec<f32>,
}

pub fn header(task: EvalTask) -> Vec<&'static str> {
    match task {
        EvalTask::Model(TaskKind::Binary) => {
            vec!["image", "tp", "fp", "fn", "tn", "precision", "recall", "f1", "iou", "oa", "undefined"]
        }
        EvalTask::Model(TaskKind::Density) => {
            vec!["image", "pred_count", "gt_count", "game0", "game1", "game2", "game3", "rmse"]
        }
        EvalTask::Model(TaskKind::Multiclass { .. }) => {
            vec!["image", "pixels", "correct", "pixel_acc", "mean_acc", "mean_iou"]
        }
        EvalTask::Saliency => vec!["image", "s_measure", "max_f", "max_e", "mae"],
    }
}

fn binary_row(name: &str, c: &ConfusionCounts) -> Vec<String> {
    let (m, u) = binary_metrics(c);
    let undefined: Vec<&str> = [
        ("precision", u.precision),
        ("recall", u.recall),
        ("f1", u.f1),
        ("iou", u.iou),
        ("oa", u.oa),
    ]
    .iter()
    .filter(|(_, f)| *f)
    .map(|(n, _)| *n)
    .collect();
    let mut row = vec![name.to_string()];
    row.extend([c.tp, c.fp, c.fn_, c.tn].map(|v| v.to_string()));
    row.extend([m.precision, m.recall, m.f1, m.iou, m.oa].map(|v| v.to_string()));
    row.push(undefined.join(";"));
    row
}

/// Per-image rows plus the aggregate row (pooled counts for binary and
/// class maps, means for the others).
pub fn score(task: EvalTask, items: &[Item], h: usize, w: usize) -> anyhow::Result<Vec<Vec<String>>> {
    ensure!(!items.is_empty(), "nothing to evaluate");
    let mut rows = Vec::with_capacity(items.len() + 1);
    match task {
        EvalTask::Model(TaskKind::Binary) => {
            let mut total = ConfusionCounts::default();
            for it in items {
                let c = ConfusionCounts::from_maps(&it.pred, &it.gt).with_context(|| it.name.clone())?;
                total.merge(&c);
                rows.push(binary_row(&it.name, &c));
            }
            rows.push(binary_row(AGGREGATE_ROW, &total));
        }
        EvalTask::Model(TaskKind::Multiclass { classes }) => {
            let labels = |m: &[f32]| m.iter().map(|v| *v as usize).collect::<Vec<_>>();
            let mut total = ClassConfusion::new(classes);
            let row = |name: &str, cc: &ClassConfusion| {
                let m = segmentation_metrics(cc);
                let correct: u64 = (0..cc.n_cls).map(|i| cc.at(i, i)).sum();
                vec![
                    name.to_string(),
                    cc.total().to_string(),
                    correct.to_string(),
                    m.pixel_acc.to_string(),
                    m.mean_acc.to_string(),
                    m.mean_iou.to_string(),
                ]
            };
            for it in items {
                let mut cc = ClassConfusion::new(classes);
                cc.add_maps(&labels(&it.pred), &labels(&it.gt)).with_context(|| it.name.clone())?;
                total.add_maps(&labels(&it.pred), &labels(&it.gt))?;
                rows.push(row(&it.name, &cc));
            }
            rows.push(row(AGGREGATE_ROW, &total));
        }
        EvalTask::Model(TaskKind::Density) => {
            let maps: Vec<(Vec<f32>, Vec<f32>)> = items.iter().map(|i| (i.pred.clone(), i.gt.clone())).collect();
            let count = |m: &[f32]| m.iter().map(|v| *v as f64).sum::<f64>();
            for it in items {
                let (p, g) = (count(&it.pred), count(&it.gt));
                let mut row = vec![it.name.clone(), p.to_string(), g.to_string()];
                for level in 0..4 {
                    row.push(game_single(&it.pred, &it.gt, h, w, level).with_context(|| it.name.clone())?.to_string());
                }
                row.push((p - g).abs().to_string());
                rows.push(row);
            }
            let r = score_maps(TaskKind::Density, &maps, h, w)?;
            let preds: f64 = items.iter().map(|i| count(&i.pred)).sum::<f64>() / items.len() as f64;
            let gts: f64 = items.iter().map(|i| count(&i.gt)).sum::<f64>() / items.len() as f64;
            let mut row = vec![AGGREGATE_ROW.to_string(), preds.to_string(), gts.to_string()];
            for key in ["game0", "game1", "game2", "game3", "rmse"] {
                row.push(r.get(key).unwrap_or(f64::NAN).to_string());
            }
            rows.push(row);
        }
        EvalTask::Saliency => {
            let mut sums = [0.0f64; 4];
            for it in items {
                let m = saliency_metrics(&it.pred, &it.gt, h, w).with_context(|| it.name.clone())?;
                let vals = [m.s_measure, m.max_f, m.max_e, m.mae];
                for (s, v) in sums.iter_mut().zip(vals) {
                    *s += v;
                }
                rows.push(std::iter::once(it.name.clone()).chain(vals.iter().map(|v| v.to_string())).collect());
            }
            let n = items.len() as f64;
            rows.push(std::iter::once(AGGREGATE_ROW.to_string()).chain(sums.iter().map(|s| (s / n).to_string())).collect());
        }
    }
    Ok(rows)
}

fn read_map(path: &Path, task: EvalTask, density_scale: f32) -> anyhow::Result<Tensor<f32>> {
    let is_pgm = path.extension().is_some_and(|e| e == "pgm");
    let t = if is_pgm {
        let t = pgm::read(path)?;
        match task {
            EvalTask::Model(TaskKind::Density) => {
                let shape = t.shape().to_vec();
                Tensor::new(&shape, t.data().iter().map(|v| v * density_scale).collect())?
            }
            EvalTask::Model(TaskKind::Multiclass { .. }) => {
                let shape = t.shape().to_vec();
                Tensor::new(&shape, t.data().iter().map(|v| (v * 255.0).round()).collect())?
            }
            _ => t,
        }
    } else {
        io::read_as::<f32>(path)?
    };
    let (h, w) = (t.shape()[0], t.shape().get(1).copied().unwrap_or(1));
    ensure!(t.len() == h * w, "{} is not a single-channel map", path.display());
    Ok(t.reshape(&[h, w])?)
}

fn load_pairs(path: &Path) -> anyhow::Result<(EvalTask, Vec<Item>, usize, usize)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let m: PairsManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let task = parse_task(&m.task, m.classes)?;
    let root = path.parent().unwrap_or(Path::new("."));
    let mut items = Vec::with_capacity(m.pairs.len());
    let mut size = None;
    for p in &m.pairs {
        let pred = read_map(&root.join(&p.pred), task, m.density_scale)?;
        let gt = read_map(&root.join(&p.gt), task, m.density_scale)?;
        ensure!(pred.shape() == gt.shape(), "{} and {} differ in size", p.pred.display(), p.gt.display());
        let hw = (gt.shape()[0], gt.shape()[1]);
        ensure!(*size.get_or_insert(hw) == hw, "all maps in one manifest must share a size");
        items.push(Item {
            name: p.pred.display().to_string(),
            pred: pred.data().to_vec(),
            gt: gt.data().to_vec(),
        });
    }
    let (h, w) = size.context("pairs manifest is empty")?;
    Ok((task, items, h, w))
}

fn run_model(ckpt: &Path, data: &Path) -> anyhow::Result<(EvalTask, Vec<Item>, usize, usize)> {
    let model: ComPtrModel<f32> = checkpoint::load(ckpt)?;
    let (manifest, samples) = load_dataset(data)?;
    ensure!(
        manifest.task == model.config.task,
        "dataset task {} does not match checkpoint task {}",
        manifest.task.name(),
        model.config.task.name()
    );
    ensure!(
        (manifest.height, manifest.width) == (model.config.height, model.config.width),
        "dataset is {}×{} but the checkpoint expects {}×{}",
        manifest.height,
        manifest.width,
        model.config.height,
        model.config.width
    );
    let mut items = Vec::with_capacity(samples.len());
    for (entry, s) in manifest.samples.iter().zip(&samples) {
        items.push(Item {
            name: entry.target.clone(),
            pred: predict_map(&model, s)?,
            gt: s.target.data().to_vec(),
        });
    }
    Ok((EvalTask::Model(model.config.task), items, manifest.height, manifest.width))
}

pub fn run(args: EvalArgs) -> anyhow::Result<()> {
    let a = config::merge(&args, args.config.as_deref())?;
    let out = a.out.context("--out is required")?;
    let (task, items, h, w) = match (&a.ckpt, &a.data, &a.pairs) {
        (Some(c), Some(d), None) => run_model(c, d)?,
        (None, None, Some(p)) => load_pairs(p)?,
        _ => bail!("give either --ckpt with --data, or --pairs"),
    };
    if let Some(t) = &a.task {
        let classes = match task {
            EvalTask::Model(TaskKind::Multiclass { classes }) => Some(classes),
            _ => None,
        };
        ensure!(parse_task(t, classes)? == task, "--task {t} does not match the inputs");
    }
    let rows = score(task, &items, h, w)?;
    let head = header(task);
    let mut wtr = csv::Writer::from_path(&out).with_context(|| format!("writing {}", out.display()))?;
    wtr.write_record(&head)?;
    for r in &rows {
        wtr.write_record(r)?;
    }
    wtr.flush()?;
    let agg = rows.last().expect("aggregate row");
    let summary: serde_json::Map<String, serde_json::Value> = head
        .iter()
        .zip(agg)
        .skip(1)
        .map(|(k, v)| {
            let val = v.parse::<f64>().map(serde_json::Value::from).unwrap_or_else(|_| v.clone().into());
            (k.to_string(), val)
        })
        .collect();
    crate::print_json(&serde_json::json!({ "out": out, "images": items.len(), "aggregate": summary }));
    Ok(())
}
