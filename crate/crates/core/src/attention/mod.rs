//! Cross-stream attention units.

pub mod ada;
pub mod compops;
pub mod config;
pub mod flops;
pub mod standard;

pub use ada::{ada_forward, aggregate, aggregate_pre_ffn, aggregation_weights, diffuse, diffusion_update, AdaWeights};
pub use compops::{comp_consistency, comp_difference, comp_ops, pyramid, CompOpsWeights};
pub use config::{AdaConfig, AttentionKind, CompOp, Prototypes, SourcePair};
pub use flops::{ada_flops, flops_of, standard_flops, FlopBreakdown, FlopQuery};
pub use standard::{standard_attention, StdAttentionWeights};

use crate::error::Result;
use crate::nn::ParamBuilder;
use crate::tensor::{ParamId, Scalar, Tape, Var};

/// Either attention flavour behind one interface.
#[derive(Debug, Clone)]
pub enum AttentionUnit {
    Ada(AdaWeights),
    Standard(StdAttentionWeights),
}

impl AttentionUnit {
    /// Builds a unit with `C = D = dim`.
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        kind: AttentionKind,
        comp_op: CompOp,
        dim: usize,
        ffn_expansion: usize,
        source_tokens: usize,
    ) -> Result<Self> {
        Ok(match kind {
            AttentionKind::Ada(prototypes) => {
                let cfg = AdaConfig {
                    prototypes,
                    proto_dim: dim,
                    feat_dim: dim,
                    ffn_expansion,
                    comp_op,
                };
                AttentionUnit::Ada(AdaWeights::new(b, cfg, source_tokens)?)
            }
            AttentionKind::Standard => {
                AttentionUnit::Standard(StdAttentionWeights::new(b, comp_op, dim, dim, ffn_expansion)?)
            }
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<'_, T>, s: &SourcePair<T>, slot: &Var<T>) -> Result<Var<T>> {
        match self {
            AttentionUnit::Ada(w) => ada_forward(tape, w, s, slot),
            AttentionUnit::Standard(w) => standard_attention(tape, w, s, slot),
        }
    }

    pub fn gamma(&self) -> ParamId {
        match self {
            AttentionUnit::Ada(w) => w.gamma,
            AttentionUnit::Standard(w) => w.gamma,
        }
    }

    /// Same weights with the CompOps front-end replaced by the identity one.
    pub fn without_comp_ops(&self) -> Self {
        let mut unit = self.clone();
        match &mut unit {
            AttentionUnit::Ada(w) => {
                w.cfg.comp_op = CompOp::Identity;
                w.comp = None;
            }
            AttentionUnit::Standard(w) => {
                w.comp_op = CompOp::Identity;
                w.comp = None;
            }
        }
        unit
    }

    pub fn comp_weights(&self) -> Option<&CompOpsWeights> {
        match self {
            AttentionUnit::Ada(w) => w.comp.as_ref(),
            AttentionUnit::Standard(w) => w.comp.as_ref(),
        }
    }
}
