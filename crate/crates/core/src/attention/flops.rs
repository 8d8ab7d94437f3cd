//! Closed-form operation counts of one attention unit.
//!
//! A multiply-add counts as one operation. Element-wise costs:
//! layer norm 5 per element (mean, variance, centre, scale, shift), GELU 8,
//! softmax 3 (exp, sum, divide), row normalisation for the cosine 2 per
//! element (square-accumulate, divide).

use serde::Serialize;

use super::config::AttentionKind;

pub const LAYER_NORM_COST: u64 = 5;
pub const GELU_COST: u64 = 8;
pub const SOFTMAX_COST: u64 = 3;
pub const NORMALIZE_COST: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopQuery {
    /// Source tokens `L`.
    pub source_tokens: u64,
    /// Slot tokens `L'`.
    pub slot_tokens: u64,
    /// Slot channels `C`.
    pub channels: u64,
    /// Key/value/prototype channels `D`.
    pub proto_dim: u64,
    pub ffn_expansion: u64,
    /// Whether the multi-scale CompOps front-end is counted.
    pub comp_ops: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FlopBreakdown {
    pub comp_ops: u64,
    pub projections: u64,
    pub similarity: u64,
    pub softmax: u64,
    pub reconstruction: u64,
    pub ffn: u64,
    pub residual: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.comp_ops + self.projections + self.similarity + self.softmax + self.reconstruction + self.ffn + self.residual
    }

    /// Everything except the CompOps front-end.
    pub fn attention_stage(&self) -> u64 {
        self.total() - self.comp_ops
    }
}

fn ffn(tokens: u64, dim: u64, r: u64) -> u64 {
    let hidden = dim * r;
    tokens * (LAYER_NORM_COST * dim + dim * hidden + hidden + GELU_COST * hidden + hidden * dim + dim)
}

/// Combine op, two separable pools (windows 3 and 5), norm over `3C`, linear
/// to `2D` with bias.
fn comp_ops(q: &FlopQuery) -> u64 {
    if !q.comp_ops {
        return 0;
    }
    let (l, c, d) = (q.source_tokens, q.channels, q.proto_dim);
    l * c + l * c * 2 * (3 + 5) + l * LAYER_NORM_COST * 3 * c + l * (3 * c * 2 * d + 2 * d)
}

fn cosine(rows_a: u64, rows_b: u64, d: u64) -> u64 {
    rows_a * rows_b * d + (rows_a + rows_b) * NORMALIZE_COST * d
}

pub fn ada_flops(q: &FlopQuery, prototypes: u64) -> FlopBreakdown {
    let (l, lp, c, d, k) = (q.source_tokens, q.slot_tokens, q.channels, q.proto_dim, prototypes);
    FlopBreakdown {
        comp_ops: comp_ops(q),
        // P·Wq_fw, mix·Wo_fw, P̃·Wk_bw, P̃·Wv_bw are prototype-only; slot·Wq_bw and Z·Wo_bw scale with L'
        projections: 4 * k * d * d + lp * c * d + lp * d * c,
        similarity: cosine(k, l, d) + cosine(lp, k, d),
        softmax: SOFTMAX_COST * (k * l + lp * k),
        reconstruction: k * l * d + lp * k * d,
        ffn: ffn(k, d, q.ffn_expansion) + ffn(lp, c, q.ffn_expansion),
        // γ⊙Z, slot + γ⊙Z, slot + FFN(...)
        residual: 3 * lp * c,
    }
}

pub fn standard_flops(q: &FlopQuery) -> FlopBreakdown {
    let (l, lp, c, d) = (q.source_tokens, q.slot_tokens, q.channels, q.proto_dim);
    FlopBreakdown {
        comp_ops: comp_ops(q),
        projections: lp * c * d + 2 * l * d * d + lp * d * c,
        // Q·Kᵀ plus the 1/√D scaling
        similarity: lp * l * d + lp * l,
        softmax: SOFTMAX_COST * lp * l,
        reconstruction: lp * l * d,
        ffn: ffn(lp, c, q.ffn_expansion),
        residual: 3 * lp * c,
    }
}

pub fn flops_of(kind: AttentionKind, q: &FlopQuery) -> FlopBreakdown {
    match kind {
        AttentionKind::Ada(p) => ada_flops(q, p.resolve(q.source_tokens as usize) as u64),
        AttentionKind::Standard => standard_flops(q),
    }
}
