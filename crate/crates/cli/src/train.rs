use std::collections::BTreeSet;
use std::fs::File;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Args;
use comptr::attention::AttentionKind;
use comptr::data::load_dataset;
use comptr::model::{checkpoint, train, Ablation, ComPtrModel, Component, ModelConfig, TaskKind, TrainConfig};
use comptr::Error;
use serde::{Deserialize, Serialize};

use crate::config;

pub const LOSS_LOG: &str = "loss_log.csv";
pub const TRAIN_CONFIG: &str = "train_config.json";

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    /// change | density; checked against the dataset manifest when given.
    #[arg(long)]
    pub task: Option<String>,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// [default: 20]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Prototype count, `inf` for one per token, or `std` for dense attention [default: 4].
    #[arg(long)]
    pub k: Option<String>,
    /// Components to remove: ceb, dab, compops (comma separated).
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub ablate: Vec<String>,
    /// Peak learning rate of the cosine schedule [default: 0.002].
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 8]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// First-stage width [default: 16].
    #[arg(long)]
    pub base_channels: Option<usize>,
    /// Seeds initialisation, shuffling and flips [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disable random left-right flips.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_flip: Option<bool>,
    /// JSON file with any of these options; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn task_matches(flag: &str, task: TaskKind) -> bool {
    matches!(
        (flag, task),
        ("change" | "binary", TaskKind::Binary) | ("density", TaskKind::Density) | ("multiclass", TaskKind::Multiclass { .. })
    )
}

pub fn run(args: TrainArgs) -> anyhow::Result<()> {
    let a = config::merge(&args, args.config.as_deref())?;
    let data_dir = a.data.context("--data is required")?;
    let out = a.out.context("--out is required")?;
    let (manifest, data) = load_dataset(&data_dir)?;
    if let Some(t) = &a.task {
        if !task_matches(t, manifest.task) {
            bail!("--task {t} does not match dataset task {}", manifest.task.name());
        }
    }
    let attention: AttentionKind = a.k.as_deref().unwrap_or("4").parse()?;
    let drop: BTreeSet<Component> = a.ablate.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    let seed = a.seed.unwrap_or(0);
    let model_cfg = ModelConfig {
        height: manifest.height,
        width: manifest.width,
        base_channels: a.base_channels.unwrap_or(16),
        attention,
        task: manifest.task,
        ablation: Ablation::default().without(&drop),
        ..Default::default()
    };
    let defaults = TrainConfig::default();
    let train_cfg = TrainConfig {
        epochs: a.epochs.unwrap_or(defaults.epochs),
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        lr: a.lr.unwrap_or(defaults.lr),
        seed,
        flip_augment: !a.no_flip.unwrap_or(false),
        ..defaults
    };

    let mut model = ComPtrModel::<f32>::new(model_cfg, seed)?;
    checkpoint::save(&model, seed, &out)?;
    std::fs::write(out.join(TRAIN_CONFIG), serde_json::to_string_pretty(&train_cfg)? + "\n")?;
    let mut log = csv::Writer::from_writer(File::create(out.join(LOSS_LOG))?);
    log.write_record(["epoch", "mean_loss", "lr", "seconds"])?;
    log.flush()?;

    let mut last_good = None;
    let result = train(&mut model, &data, &train_cfg, |e, m| {
        let csv_err = |e: csv::Error| Error::Format(e.to_string());
        log.write_record([e.epoch.to_string(), e.mean_loss.to_string(), e.lr.to_string(), e.seconds.to_string()])
            .map_err(csv_err)?;
        log.flush().map_err(|err| Error::io(LOSS_LOG, err))?;
        checkpoint::save(m, seed, &out)?;
        last_good = Some(e.epoch);
        eprintln!("epoch {} loss {:.5} lr {:.2e} {:.1}s", e.epoch, e.mean_loss, e.lr, e.seconds);
        Ok(())
    });
    let logs = match result {
        Ok(l) => l,
        Err(e @ Error::NonFiniteLoss { .. }) => {
            let kept = last_good.map_or("initial weights".to_string(), |ep| format!("epoch {ep}"));
            return Err(anyhow::Error::new(e).context(format!("training aborted; checkpoint in {} holds {kept}", out.display())));
        }
        Err(e) => return Err(e.into()),
    };
    crate::print_json(&serde_json::json!({
        "checkpoint": out,
        "epochs": logs.len(),
        "final_loss": logs.last().map(|l| l.mean_loss),
        "params": model.num_params(),
        "attention": attention.to_string(),
        "ablated": drop.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
    }));
    Ok(())
}
