//! Dense single-head softmax attention with the same CompOps front-end and the
//! same gated residual wrapper as the aggregation-diffusion unit.

use super::compops::{comp_ops, CompOpsWeights};
use super::config::{CompOp, SourcePair};
use crate::error::{Error, Result};
use crate::nn::{Ffn, Linear, ParamBuilder};
use crate::tensor::{ParamId, Scalar, Tape, Var};

#[derive(Debug, Clone)]
pub struct StdAttentionWeights {
    pub comp_op: CompOp,
    pub proto_dim: usize,
    pub feat_dim: usize,
    pub comp: Option<CompOpsWeights>,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub gamma: ParamId,
    pub ffn: Ffn,
}

impl StdAttentionWeights {
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        comp_op: CompOp,
        feat_dim: usize,
        proto_dim: usize,
        ffn_expansion: usize,
    ) -> Result<Self> {
        if comp_op == CompOp::Identity && feat_dim != proto_dim {
            return Err(Error::invalid("identity CompOps needs D == C"));
        }
        let comp = match comp_op {
            CompOp::Identity => None,
            _ => Some(CompOpsWeights::new(b, feat_dim, proto_dim)?),
        };
        Ok(Self {
            comp_op,
            proto_dim,
            feat_dim,
            comp,
            q: Linear::new(b, "q", feat_dim, proto_dim, false)?,
            k: Linear::new(b, "k", proto_dim, proto_dim, false)?,
            v: Linear::new(b, "v", proto_dim, proto_dim, false)?,
            o: Linear::new(b, "o", proto_dim, feat_dim, false)?,
            gamma: b.zeros("gamma", &[feat_dim])?,
            ffn: Ffn::new(b, "ffn", feat_dim, ffn_expansion)?,
        })
    }
}

/// `softmax(Q·Kᵀ/√D)·V·Wo` for `Q = slot·Wq`, `K = keys·Wk`, `V = values·Wv`.
pub fn dense_update<T: Scalar>(
    tape: &Tape<'_, T>,
    w: &StdAttentionWeights,
    keys: &Var<T>,
    values: &Var<T>,
    slot: &Var<T>,
) -> Result<Var<T>> {
    let q = w.q.forward(tape, slot)?;
    let k = w.k.forward(tape, keys)?;
    let v = w.v.forward(tape, values)?;
    let scale = T::lit(1.0 / (w.proto_dim as f64).sqrt());
    let logits = tape.scale(&tape.matmul_nt(&q, &k)?, scale)?;
    let attn = tape.softmax_rows(&logits)?;
    w.o.forward(tape, &tape.matmul(&attn, &v)?)
}

pub fn standard_attention<T: Scalar>(
    tape: &Tape<'_, T>,
    w: &StdAttentionWeights,
    s: &SourcePair<T>,
    slot: &Var<T>,
) -> Result<Var<T>> {
    let (keys, values) = comp_ops(tape, w.comp_op, w.comp.as_ref(), s)?;
    let z = dense_update(tape, w, &keys, &values, slot)?;
    let gated = tape.add(slot, &tape.mul_row(&z, &tape.param(w.gamma))?)?;
    tape.add(slot, &w.ffn.forward(tape, &gated)?)
}
