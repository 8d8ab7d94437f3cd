//! Hierarchical four-stage feature extractor shared by both input streams.

use crate::error::Result;
use crate::nn::{Ffn, LayerNorm, Linear, ParamBuilder};
use crate::tensor::{Scalar, Tape, Var};

/// Single-head scaled dot-product self-attention.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub dim: usize,
}

impl SelfAttention {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, dim: usize) -> Result<Self> {
        let mut s = b.scope("attn");
        Ok(Self {
            q: Linear::new(&mut s, "q", dim, dim, true)?,
            k: Linear::new(&mut s, "k", dim, dim, true)?,
            v: Linear::new(&mut s, "v", dim, dim, true)?,
            o: Linear::new(&mut s, "o", dim, dim, true)?,
            dim,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let q = self.q.forward(tape, x)?;
        let k = self.k.forward(tape, x)?;
        let v = self.v.forward(tape, x)?;
        let logits = tape.scale(&tape.matmul_nt(&q, &k)?, T::lit(1.0 / (self.dim as f64).sqrt()))?;
        let attn = tape.softmax_rows(&logits)?;
        self.o.forward(tape, &tape.matmul(&attn, &v)?)
    }
}

/// `x + attn(norm(x))`, then `x + ffn(x)` (the FFN normalises its input).
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub norm: LayerNorm,
    pub attn: SelfAttention,
    pub ffn: Ffn,
}

impl TransformerBlock {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, dim: usize, ffn_expansion: usize) -> Result<Self> {
        let mut s = b.scope("block");
        Ok(Self {
            norm: LayerNorm::new(&mut s, "norm", dim)?,
            attn: SelfAttention::new(&mut s, dim)?,
            ffn: Ffn::new(&mut s, "ffn", dim, ffn_expansion)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let x = tape.add(x, &self.attn.forward(tape, &self.norm.forward(tape, x)?)?)?;
        tape.add(&x, &self.ffn.forward(tape, &x)?)
    }
}

/// Downsampling by space-to-depth plus a linear projection, then one
/// transformer block. The first stage embeds patches and normalises after the
/// projection; later stages merge 2×2 neighbourhoods and normalise before it.
#[derive(Debug, Clone)]
pub struct EncoderStage {
    pub factor: usize,
    pub pre_norm: Option<LayerNorm>,
    pub proj: Linear,
    pub post_norm: Option<LayerNorm>,
    pub block: TransformerBlock,
    pub out_dim: usize,
}

impl EncoderStage {
    pub fn patch_embed<T: Scalar>(b: &mut ParamBuilder<'_, T>, patch: usize, in_ch: usize, dim: usize, r: usize) -> Result<Self> {
        let merged = patch * patch * in_ch;
        Ok(Self {
            factor: patch,
            pre_norm: None,
            proj: Linear::new(b, "embed", merged, dim, true)?,
            post_norm: Some(LayerNorm::new(b, "embed_norm", dim)?),
            block: TransformerBlock::new(b, dim, r)?,
            out_dim: dim,
        })
    }

    pub fn merge<T: Scalar>(b: &mut ParamBuilder<'_, T>, in_dim: usize, r: usize) -> Result<Self> {
        Ok(Self {
            factor: 2,
            pre_norm: Some(LayerNorm::new(b, "merge_norm", 4 * in_dim)?),
            proj: Linear::new(b, "merge", 4 * in_dim, 2 * in_dim, false)?,
            post_norm: None,
            block: TransformerBlock::new(b, 2 * in_dim, r)?,
            out_dim: 2 * in_dim,
        })
    }

    /// `x: [h × w × c]` grid; returns `[(h/f)·(w/f) × out_dim]` tokens.
    pub fn forward<T: Scalar>(&self, tape: &Tape<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let merged = tape.space_to_depth(x, self.factor)?;
        let (h, w, c) = merged.value().dims3("encoder stage")?;
        let mut t = tape.reshape(&merged, &[h * w, c])?;
        if let Some(n) = &self.pre_norm {
            t = n.forward(tape, &t)?;
        }
        t = self.proj.forward(tape, &t)?;
        if let Some(n) = &self.post_norm {
            t = n.forward(tape, &t)?;
        }
        self.block.forward(tape, &t)
    }
}
