use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::optim::{cosine_lr, AdamW, AdamWConfig};
use super::{ComPtrModel, SamplePair};
use crate::error::{Error, Result};
use crate::tensor::{Gradients, Rng, Scalar, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate reached at the end of the cosine schedule.
    pub min_lr: f64,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    /// Random left-right flips of whole samples.
    pub flip_augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            lr: 2e-3,
            min_lr: 0.0,
            optimizer: AdamWConfig::default(),
            seed: 0,
            flip_augment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

fn non_finite(step: u64, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::NonFiniteLoss {
            step,
            detail: format!("non-finite value produced by {op}"),
        },
        other => other,
    }
}

/// One optimizer update on the mean loss of `batch`. Gradients of the samples
/// are summed in batch order, so the update does not depend on scheduling.
/// On failure the parameters are left as they were before the step.
pub fn train_step<T: Scalar>(
    model: &mut ComPtrModel<T>,
    opt: &mut AdamW<T>,
    batch: &[SamplePair],
    lr: f64,
    step: u64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut total = Gradients::empty(model.params.len());
    let mut loss_sum = 0.0;
    for sample in batch {
        let tape = Tape::new(&model.params);
        let loss = model.sample_loss(&tape, sample).map_err(|e| non_finite(step, e))?;
        let value = loss.value().item().as_f64();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("loss = {value}"),
            });
        }
        loss_sum += value;
        total.merge(tape.backward(&loss).map_err(|e| non_finite(step, e))?)?;
    }
    let n = batch.len() as f64;
    total.scale(T::lit(1.0 / n));
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            detail: "non-finite gradient".into(),
        });
    }
    opt.step(&mut model.params, &total, lr)?;
    Ok(loss_sum / n)
}

/// Runs `cfg.epochs` epochs over `data`, calling `on_epoch` after each one.
pub fn train<T: Scalar>(
    model: &mut ComPtrModel<T>,
    data: &[SamplePair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &ComPtrModel<T>) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    if cfg.epochs > 0 && data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let base = Rng::new(cfg.seed);
    let mut order_rng = base.fork(1);
    let mut flip_rng = base.fork(2);
    let mut opt = AdamW::new(cfg.optimizer, model.params.len());
    let per_epoch = data.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * per_epoch;
    let mut step = 0usize;
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order_rng.shuffle(&mut order);
        let (mut loss_sum, mut lr) = (0.0, cfg.lr);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<SamplePair> = chunk
                .iter()
                .map(|&i| {
                    if cfg.flip_augment && flip_rng.bernoulli(0.5) {
                        data[i].flipped()
                    } else {
                        data[i].clone()
                    }
                })
                .collect();
            lr = cosine_lr(cfg.lr, cfg.min_lr, step, total_steps);
            loss_sum += train_step(model, &mut opt, &batch, lr, step as u64)? * batch.len() as f64;
            step += 1;
        }
        let log = EpochLog {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&log, model)?;
        logs.push(log);
    }
    Ok(logs)
}
