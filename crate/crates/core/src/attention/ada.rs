//! Aggregation-diffusion attention: a small bank of learned prototypes first
//! gathers information from the source tokens, then every slot token reads
//! back from the updated prototypes.

use super::compops::{comp_ops, CompOpsWeights};
use super::config::{AdaConfig, CompOp, Prototypes, SourcePair};
use crate::error::{Error, Result};
use crate::nn::{Ffn, Linear, ParamBuilder};
use crate::tensor::{ParamId, Scalar, Tape, Var};

#[derive(Debug, Clone)]
pub struct AdaWeights {
    pub cfg: AdaConfig,
    /// Resolved prototype count (the per-token sentinel becomes `L`).
    pub num_prototypes: usize,
    /// Source token count the weights were built for when `K = L`.
    pub source_tokens: Option<usize>,
    pub prototypes: ParamId,
    pub q_fw: Linear,
    pub o_fw: Linear,
    pub ffn_fw: Ffn,
    pub q_bw: Linear,
    pub k_bw: Linear,
    pub v_bw: Linear,
    pub o_bw: Linear,
    pub gamma: ParamId,
    pub ffn_bw: Ffn,
    pub comp: Option<CompOpsWeights>,
}

impl AdaWeights {
    /// `source_tokens` is only consulted for `Prototypes::PerToken`.
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, cfg: AdaConfig, source_tokens: usize) -> Result<Self> {
        cfg.validate()?;
        let (d, c, r) = (cfg.proto_dim, cfg.feat_dim, cfg.ffn_expansion);
        let k = cfg.prototypes.resolve(source_tokens);
        if k == 0 {
            return Err(Error::invalid("prototype count resolved to zero"));
        }
        let comp = match cfg.comp_op {
            CompOp::Identity => None,
            _ => Some(CompOpsWeights::new(b, c, d)?),
        };
        let prototypes = b.weight("prototypes", &[k, d])?;
        let q_fw = Linear::new(b, "q_fw", d, d, false)?;
        let o_fw = Linear::new(b, "o_fw", d, d, false)?;
        let ffn_fw = Ffn::new(b, "ffn_fw", d, r)?;
        let q_bw = Linear::new(b, "q_bw", c, d, false)?;
        let k_bw = Linear::new(b, "k_bw", d, d, false)?;
        let v_bw = Linear::new(b, "v_bw", d, d, false)?;
        let o_bw = Linear::new(b, "o_bw", d, c, false)?;
        let gamma = b.zeros("gamma", &[c])?;
        let ffn_bw = Ffn::new(b, "ffn_bw", c, r)?;
        Ok(Self {
            cfg,
            num_prototypes: k,
            source_tokens: (cfg.prototypes == Prototypes::PerToken).then_some(source_tokens),
            prototypes,
            q_fw,
            o_fw,
            ffn_fw,
            q_bw,
            k_bw,
            v_bw,
            o_bw,
            gamma,
            ffn_bw,
            comp,
        })
    }

    fn check_tokens(&self, l: usize) -> Result<()> {
        match self.source_tokens {
            Some(expected) if expected != l => Err(Error::invalid(format!(
                "per-token prototypes were built for L = {expected}, got L = {l}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Prototype-to-token attention weights `[K × L]`, each row a distribution
/// over the source tokens.
pub fn aggregation_weights<T: Scalar>(tape: &Tape<'_, T>, w: &AdaWeights, k_fw: &Var<T>) -> Result<Var<T>> {
    let d = w.cfg.proto_dim;
    if k_fw.shape().len() != 2 || k_fw.shape()[1] != d {
        return Err(Error::ShapeMismatch {
            op: "aggregate",
            left: k_fw.shape().to_vec(),
            right: vec![d],
        });
    }
    let queries = w.q_fw.forward(tape, &tape.param(w.prototypes))?;
    tape.softmax_rows(&tape.cosine_rows(&queries, k_fw)?)
}

/// Token mixture of every prototype before the output projection, `[K × D]`.
pub fn aggregate_pre_ffn<T: Scalar>(tape: &Tape<'_, T>, w: &AdaWeights, k_fw: &Var<T>, v_fw: &Var<T>) -> Result<Var<T>> {
    if k_fw.shape() != v_fw.shape() {
        return Err(Error::ShapeMismatch {
            op: "aggregate",
            left: k_fw.shape().to_vec(),
            right: v_fw.shape().to_vec(),
        });
    }
    w.check_tokens(k_fw.shape()[0])?;
    let weights = aggregation_weights(tape, w, k_fw)?;
    tape.matmul(&weights, v_fw)
}

/// Updated prototypes `[K × D]`.
pub fn aggregate<T: Scalar>(tape: &Tape<'_, T>, w: &AdaWeights, k_fw: &Var<T>, v_fw: &Var<T>) -> Result<Var<T>> {
    let mixed = aggregate_pre_ffn(tape, w, k_fw, v_fw)?;
    w.ffn_fw.forward(tape, &w.o_fw.forward(tape, &mixed)?)
}

/// Gated read-back `γ ⊙ (softmax_K(cos(slot·Wq, P̃·Wk)) · P̃·Wv · Wo)`, `[L' × C]`.
pub fn diffusion_update<T: Scalar>(tape: &Tape<'_, T>, w: &AdaWeights, p_tilde: &Var<T>, slot: &Var<T>) -> Result<Var<T>> {
    let (k, c) = (w.num_prototypes, w.cfg.feat_dim);
    if p_tilde.shape() != [k, w.cfg.proto_dim] {
        return Err(Error::ShapeMismatch {
            op: "diffuse",
            left: p_tilde.shape().to_vec(),
            right: vec![k, w.cfg.proto_dim],
        });
    }
    if slot.shape().len() != 2 || slot.shape()[1] != c {
        return Err(Error::ShapeMismatch {
            op: "diffuse",
            left: slot.shape().to_vec(),
            right: vec![c],
        });
    }
    let queries = w.q_bw.forward(tape, slot)?;
    let keys = w.k_bw.forward(tape, p_tilde)?;
    let values = w.v_bw.forward(tape, p_tilde)?;
    let weights = tape.softmax_rows(&tape.cosine_rows(&queries, &keys)?)?;
    let z = w.o_bw.forward(tape, &tape.matmul(&weights, &values)?)?;
    tape.mul_row(&z, &tape.param(w.gamma))
}

/// `slot + FFN(slot + γ ⊙ Z)`.
pub fn diffuse<T: Scalar>(tape: &Tape<'_, T>, w: &AdaWeights, p_tilde: &Var<T>, slot: &Var<T>) -> Result<Var<T>> {
    let update = diffusion_update(tape, w, p_tilde, slot)?;
    let gated = tape.add(slot, &update)?;
    tape.add(slot, &w.ffn_bw.forward(tape, &gated)?)
}

pub fn ada_forward<T: Scalar>(tape: &Tape<'_, T>, w: &AdaWeights, s: &SourcePair<T>, slot: &Var<T>) -> Result<Var<T>> {
    let (k_fw, v_fw) = comp_ops(tape, w.cfg.comp_op, w.comp.as_ref(), s)?;
    let p_tilde = aggregate(tape, w, &k_fw, &v_fw)?;
    diffuse(tape, w, &p_tilde, slot)
}
