//! Two-stream encoder–decoder for bi-source dense prediction.

pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod evaluate;
pub mod loss;
pub mod optim;
pub mod train;

use std::collections::BTreeSet;

pub use config::{Ablation, Component, ModelConfig, TaskKind, NUM_STAGES, PATCH_SIZE, TOTAL_STRIDE};
pub use encoder::{EncoderStage, SelfAttention, TransformerBlock};
pub use evaluate::{evaluate, predict_map, score_maps};
pub use loss::task_loss;
pub use optim::{cosine_lr, AdamW, AdamWConfig};
pub use train::{train, train_step, EpochLog, TrainConfig};

use crate::attention::{AttentionKind, SourcePair};
use crate::blocks::{ceb_forward, dab_forward, CebUnit, DabUnit};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, ParamBuilder};
use crate::tensor::{ParamStore, Rng, Scalar, Tape, Tensor, Var};

/// Two co-registered images `[H × W × ch]` in `[0, 1]` and a per-pixel
/// target `[H × W]`: a 0/1 mask, class indices stored as floats, or a density.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub img1: Tensor<f32>,
    pub img2: Tensor<f32>,
    pub target: Tensor<f32>,
}

impl SamplePair {
    pub fn new(img1: Tensor<f32>, img2: Tensor<f32>, target: Tensor<f32>) -> Result<Self> {
        if img1.shape() != img2.shape() {
            return Err(Error::ShapeMismatch {
                op: "sample_pair",
                left: img1.shape().to_vec(),
                right: img2.shape().to_vec(),
            });
        }
        let (h, w, _) = img1.dims3("sample_pair")?;
        if target.shape() != [h, w] {
            return Err(Error::ShapeMismatch {
                op: "sample_pair target",
                left: target.shape().to_vec(),
                right: vec![h, w],
            });
        }
        Ok(Self { img1, img2, target })
    }

    pub fn height(&self) -> usize {
        self.img1.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.img1.shape()[1]
    }

    /// Mirror all three maps left to right.
    pub fn flipped(&self) -> Self {
        Self {
            img1: flip_width(&self.img1),
            img2: flip_width(&self.img2),
            target: flip_width(&self.target),
        }
    }
}

fn flip_width(t: &Tensor<f32>) -> Tensor<f32> {
    let (h, w) = (t.shape()[0], t.shape()[1]);
    let c = t.len() / (h * w);
    let src = t.data();
    let mut out = Vec::with_capacity(t.len());
    for y in 0..h {
        for x in (0..w).rev() {
            out.extend_from_slice(&src[(y * w + x) * c..(y * w + x + 1) * c]);
        }
    }
    Tensor::new(t.shape(), out).expect("same shape")
}

/// Norm, linear, GELU, linear, then two bilinear 2× upsamplings back to the
/// input resolution.
#[derive(Debug, Clone)]
pub struct TaskHead {
    pub kind: TaskKind,
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TaskHead {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, kind: TaskKind, dim: usize) -> Result<Self> {
        let mut s = b.scope("head");
        Ok(Self {
            kind,
            norm: LayerNorm::new(&mut s, "norm", dim)?,
            fc1: Linear::new(&mut s, "fc1", dim, dim, true)?,
            fc2: Linear::new(&mut s, "fc2", dim, kind.out_channels(), true)?,
        })
    }

    /// `x: [h·w × dim]` → `[4h·4w × out]`.
    pub fn forward<T: Scalar>(&self, tape: &Tape<'_, T>, x: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
        let y = tape.gelu(&self.fc1.forward(tape, &self.norm.forward(tape, x)?)?)?;
        let y = self.fc2.forward(tape, &y)?;
        let out = self.kind.out_channels();
        let mut grid = tape.reshape(&y, &[h, w, out])?;
        let mut scale = 1;
        while scale < PATCH_SIZE {
            grid = tape.bilinear_upsample_2x(&grid)?;
            scale *= 2;
        }
        let flat = tape.reshape(&grid, &[h * w * PATCH_SIZE * PATCH_SIZE, out])?;
        match self.kind {
            TaskKind::Density => tape.relu(&flat),
            _ => Ok(flat),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ComPtrModel<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub stages: Vec<EncoderStage>,
    /// One per stage; `None` when the consistency blocks are removed.
    pub cebs: Option<Vec<CebUnit>>,
    pub fusion_norm: LayerNorm,
    pub fusion: Linear,
    /// Levels 0..3 from shallow to deep; the deepest level is fed by the fusion.
    pub dabs: Vec<DabUnit>,
    pub head: TaskHead,
}

impl<T: Scalar> ComPtrModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = Rng::new(seed);
        let mut b = ParamBuilder::new(&mut params, &mut rng);
        let (c, r, kind) = (config.base_channels, config.ffn_expansion, config.attention);
        let abl = config.ablation;

        let mut stages = Vec::with_capacity(NUM_STAGES);
        for i in 0..NUM_STAGES {
            let mut s = b.scope(&format!("encoder.stage{i}"));
            stages.push(if i == 0 {
                EncoderStage::patch_embed(&mut s, PATCH_SIZE, config.in_channels, c, r)?
            } else {
                EncoderStage::merge(&mut s, config.stage_channels(i - 1), r)?
            });
        }
        let cebs = if abl.ceb {
            let mut units = Vec::with_capacity(NUM_STAGES);
            for i in 0..NUM_STAGES {
                let (h, w) = config.stage_grid(i);
                let mut s = b.scope(&format!("ceb{i}"));
                units.push(CebUnit::new(&mut s, kind, config.stage_channels(i), r, h * w, abl.comp_ops)?);
            }
            Some(units)
        } else {
            None
        };
        let deep = config.stage_channels(NUM_STAGES - 1);
        let (fusion_norm, fusion) = {
            let mut s = b.scope("fusion");
            (LayerNorm::new(&mut s, "norm", 2 * deep)?, Linear::new(&mut s, "proj", 2 * deep, deep, true)?)
        };
        let mut dabs = Vec::with_capacity(NUM_STAGES - 1);
        for i in 0..NUM_STAGES - 1 {
            let (h, w) = config.stage_grid(i);
            let mut s = b.scope(&format!("dab{i}"));
            dabs.push(DabUnit::new(
                &mut s,
                kind,
                config.stage_channels(i),
                config.stage_channels(i + 1),
                r,
                h * w,
                abl.comp_ops,
                abl.dab,
            )?);
        }
        let head = TaskHead::new(&mut b, config.task, c)?;
        Ok(Self {
            config,
            params,
            stages,
            cebs,
            fusion_norm,
            fusion,
            dabs,
            head,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_elements()
    }

    fn image_var(&self, tape: &Tape<'_, T>, img: &Tensor<f32>) -> Result<Var<T>> {
        let want = [self.config.height, self.config.width, self.config.in_channels];
        if img.shape() != want {
            return Err(Error::InvalidShape {
                shape: img.shape().to_vec(),
                reason: format!("model expects images of shape {want:?}"),
            });
        }
        Ok(tape.constant(img.cast()))
    }

    /// Per-stage source pairs after consistency enhancement.
    pub fn encode(&self, tape: &Tape<'_, T>, img1: &Tensor<f32>, img2: &Tensor<f32>) -> Result<Vec<SourcePair<T>>> {
        let mut x1 = self.image_var(tape, img1)?;
        let mut x2 = self.image_var(tape, img2)?;
        let mut pairs = Vec::with_capacity(NUM_STAGES);
        for (i, stage) in self.stages.iter().enumerate() {
            let (h, w) = self.config.stage_grid(i);
            let t1 = stage.forward(tape, &x1)?;
            let t2 = stage.forward(tape, &x2)?;
            let mut pair = SourcePair::new(t1, t2, h, w)?;
            if let Some(cebs) = &self.cebs {
                let (e1, e2) = ceb_forward(tape, &cebs[i], &pair)?;
                pair = SourcePair::new(e1, e2, h, w)?;
            }
            let c = stage.out_dim;
            x1 = tape.reshape(&pair.f1, &[h, w, c])?;
            x2 = tape.reshape(&pair.f2, &[h, w, c])?;
            pairs.push(pair);
        }
        Ok(pairs)
    }

    /// Raw head output `[H·W × out_channels]` (logits, or density for the
    /// density task).
    pub fn decode(&self, tape: &Tape<'_, T>, pairs: &[SourcePair<T>]) -> Result<Var<T>> {
        if pairs.len() != NUM_STAGES {
            return Err(Error::invalid(format!("decode needs {NUM_STAGES} stage pairs, got {}", pairs.len())));
        }
        let deepest = &pairs[NUM_STAGES - 1];
        let cat = tape.concat_cols(&[&deepest.f1, &deepest.f2])?;
        let mut x = self.fusion.forward(tape, &self.fusion_norm.forward(tape, &cat)?)?;
        for level in (0..NUM_STAGES - 1).rev() {
            x = dab_forward(tape, &self.dabs[level], &pairs[level], &x)?;
        }
        let (h, w) = self.config.stage_grid(0);
        self.head.forward(tape, &x, h, w)
    }

    pub fn forward(&self, tape: &Tape<'_, T>, img1: &Tensor<f32>, img2: &Tensor<f32>) -> Result<Var<T>> {
        let pairs = self.encode(tape, img1, img2)?;
        self.decode(tape, &pairs)
    }

    /// Inference pass returning `[H × W × out_channels]`.
    pub fn predict(&self, img1: &Tensor<f32>, img2: &Tensor<f32>) -> Result<Tensor<T>> {
        let tape = Tape::inference(&self.params);
        let out = self.forward(&tape, img1, img2)?;
        out.to_tensor()
            .reshape(&[self.config.height, self.config.width, self.config.task.out_channels()])
    }

    /// Scalar training loss of one sample.
    pub fn sample_loss(&self, tape: &Tape<'_, T>, sample: &SamplePair) -> Result<Var<T>> {
        let pred = self.forward(tape, &sample.img1, &sample.img2)?;
        task_loss(tape, self.config.task, &pred, &sample.target, self.config.count_loss_weight)
    }

    /// Same weights with the given components removed.
    pub fn ablation_variant(&self, drop: &BTreeSet<Component>) -> Self {
        let mut m = self.clone();
        m.config.ablation = self.config.ablation.without(drop);
        let abl = m.config.ablation;
        if !abl.ceb {
            m.cebs = None;
        }
        for d in &mut m.dabs {
            if !abl.dab {
                d.attention = None;
            }
            if !abl.comp_ops {
                d.attention = d.attention.as_ref().map(|a| a.without_comp_ops());
            }
        }
        if !abl.comp_ops {
            if let Some(cebs) = &mut m.cebs {
                for u in cebs {
                    u.attention = u.attention.without_comp_ops();
                }
            }
        }
        m
    }

    /// Prototype banks of every attention unit, for tests and inspection.
    pub fn prototype_banks(&self) -> Vec<crate::tensor::ParamId> {
        use crate::attention::AttentionUnit;
        let mut out = Vec::new();
        let cebs = self.cebs.iter().flatten().map(|u| &u.attention);
        let dabs = self.dabs.iter().filter_map(|d| d.attention.as_ref());
        for unit in cebs.chain(dabs) {
            if let AttentionUnit::Ada(w) = unit {
                out.push(w.prototypes);
            }
        }
        out
    }

    pub fn attention_kind(&self) -> AttentionKind {
        self.config.attention
    }
}
