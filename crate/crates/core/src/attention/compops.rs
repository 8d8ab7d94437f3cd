//! Multi-scale complementarity operations that turn a source pair into keys
//! and values.

use super::config::{CompOp, SourcePair};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, ParamBuilder};
use crate::tensor::{Scalar, Tape, Var};

/// Pooling windows of the two coarser scales.
pub const POOL_WINDOWS: [usize; 2] = [3, 5];

#[derive(Debug, Clone)]
pub struct CompOpsWeights {
    pub norm: LayerNorm,
    pub proj: Linear,
    pub feat_dim: usize,
    pub proto_dim: usize,
}

impl CompOpsWeights {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, feat_dim: usize, proto_dim: usize) -> Result<Self> {
        let mut s = b.scope("comp");
        Ok(Self {
            norm: LayerNorm::new(&mut s, "norm", 3 * feat_dim)?,
            proj: Linear::new(&mut s, "proj", 3 * feat_dim, 2 * proto_dim, true)?,
            feat_dim,
            proto_dim,
        })
    }
}

/// `[base, avg_pool3(base), avg_pool5(base)]` concatenated along channels,
/// giving `[L × 3C]`.
pub fn pyramid<T: Scalar>(tape: &Tape<'_, T>, base: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
    let (l, c) = base.value().dims2("pyramid")?;
    if l != h * w {
        return Err(Error::InvalidShape {
            shape: base.shape().to_vec(),
            reason: format!("pyramid needs {h}×{w} tokens"),
        });
    }
    let grid = tape.reshape(base, &[h, w, c])?;
    let mut scales = vec![base.clone()];
    for window in POOL_WINDOWS {
        let pooled = tape.avg_pool_2d(&grid, window)?;
        scales.push(tape.reshape(&pooled, &[l, c])?);
    }
    let refs: Vec<&Var<T>> = scales.iter().collect();
    tape.concat_cols(&refs)
}

fn embed<T: Scalar>(tape: &Tape<'_, T>, w: &CompOpsWeights, base: &Var<T>, h: usize, wd: usize) -> Result<(Var<T>, Var<T>)> {
    if base.shape()[1] != w.feat_dim {
        return Err(Error::ShapeMismatch {
            op: "comp_ops",
            left: base.shape().to_vec(),
            right: vec![w.feat_dim],
        });
    }
    let stacked = pyramid(tape, base, h, wd)?;
    let kv = w.proj.forward(tape, &w.norm.forward(tape, &stacked)?)?;
    let keys = tape.slice_cols(&kv, 0, w.proto_dim)?;
    let values = tape.slice_cols(&kv, w.proto_dim, w.proto_dim)?;
    Ok((keys, values))
}

/// Keys and values from multi-scale products `f1 ⊙ f2`.
pub fn comp_consistency<T: Scalar>(tape: &Tape<'_, T>, w: &CompOpsWeights, s: &SourcePair<T>) -> Result<(Var<T>, Var<T>)> {
    let p0 = tape.mul(&s.f1, &s.f2)?;
    embed(tape, w, &p0, s.h, s.w)
}

/// Keys and values from multi-scale absolute differences `|f1 - f2|`.
pub fn comp_difference<T: Scalar>(tape: &Tape<'_, T>, w: &CompOpsWeights, s: &SourcePair<T>) -> Result<(Var<T>, Var<T>)> {
    let d0 = tape.absdiff(&s.f1, &s.f2)?;
    embed(tape, w, &d0, s.h, s.w)
}

/// Dispatches on `op`; identity returns `f1` as both keys and values.
pub fn comp_ops<T: Scalar>(
    tape: &Tape<'_, T>,
    op: CompOp,
    w: Option<&CompOpsWeights>,
    s: &SourcePair<T>,
) -> Result<(Var<T>, Var<T>)> {
    let need = || Error::invalid(format!("{op:?} CompOps needs projection weights"));
    match op {
        CompOp::Consistency => comp_consistency(tape, w.ok_or_else(need)?, s),
        CompOp::Difference => comp_difference(tape, w.ok_or_else(need)?, s),
        CompOp::Identity => Ok((s.f1.clone(), s.f1.clone())),
    }
}
