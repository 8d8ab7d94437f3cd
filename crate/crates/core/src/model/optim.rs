use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{Gradients, ParamStore, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied to matrices only (weights and prototype banks).
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adaptive moments with decoupled weight decay. Parameters without a
/// gradient in a step are left untouched and their moments do not advance.
#[derive(Debug, Clone)]
pub struct AdamW<T: Scalar> {
    pub cfg: AdamWConfig,
    first: Vec<Option<Tensor<T>>>,
    second: Vec<Option<Tensor<T>>>,
    steps: Vec<u64>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig, n_params: usize) -> Self {
        Self {
            cfg,
            first: vec![None; n_params],
            second: vec![None; n_params],
            steps: vec![0; n_params],
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        let c = self.cfg;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        for (id, g) in grads.iter() {
            let i = id.index();
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let m = self.first[i].get_or_insert_with(|| Tensor::zeros(g.shape()).expect("grad shape"));
            for (mv, &gv) in m.data_mut().iter_mut().zip(g.data()) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
            }
            let v = self.second[i].get_or_insert_with(|| Tensor::zeros(g.shape()).expect("grad shape"));
            for (vv, &gv) in v.data_mut().iter_mut().zip(g.data()) {
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
            }
            let bc1 = T::lit(1.0 - c.beta1.powi(t));
            let bc2 = T::lit(1.0 - c.beta2.powi(t));
            let decay = store.value(id).rank() >= 2 && c.weight_decay > 0.0;
            let shrink = T::lit(1.0 - lr * c.weight_decay);
            let (lr_t, eps) = (T::lit(lr), T::lit(c.eps));
            let (m, v) = (self.first[i].as_ref().expect("set"), self.second[i].as_ref().expect("set"));
            let p = store.value_mut(id);
            for ((pv, &mv), &vv) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                if decay {
                    *pv = *pv * shrink;
                }
                let mhat = mv / bc1;
                let vhat = vv / bc2;
                *pv = *pv - lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Cosine decay from `base` at step 0 to `min` at `total` steps.
pub fn cosine_lr(base: f64, min: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let progress = (step as f64 / total as f64).min(1.0);
    min + 0.5 * (base - min) * (1.0 + (PI * progress).cos())
}
