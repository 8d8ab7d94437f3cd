//! Consistency enhancement (encoder side) and difference awareness (decoder
//! side) blocks built on one attention unit each.

use crate::attention::{AttentionKind, AttentionUnit, CompOp, SourcePair};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, ParamBuilder};
use crate::tensor::{Scalar, Tape, Var};

/// Attention over the row-concatenation of both streams, keyed by their
/// multi-scale products.
#[derive(Debug, Clone)]
pub struct CebUnit {
    pub attention: AttentionUnit,
    pub dim: usize,
}

impl CebUnit {
    /// `comp_ops = false` swaps the product front-end for the identity one.
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        kind: AttentionKind,
        dim: usize,
        ffn_expansion: usize,
        source_tokens: usize,
        comp_ops: bool,
    ) -> Result<Self> {
        let op = if comp_ops { CompOp::Consistency } else { CompOp::Identity };
        Ok(Self {
            attention: AttentionUnit::new(b, kind, op, dim, ffn_expansion, source_tokens)?,
            dim,
        })
    }
}

/// Returns the enhanced `(f1, f2)`.
pub fn ceb_forward<T: Scalar>(tape: &Tape<'_, T>, u: &CebUnit, s: &SourcePair<T>) -> Result<(Var<T>, Var<T>)> {
    let l = s.tokens();
    let slot = tape.concat_rows(&[&s.f1, &s.f2])?;
    let out = u.attention.forward(tape, s, &slot)?;
    Ok((tape.slice_rows(&out, 0, l)?, tape.slice_rows(&out, l, l)?))
}

/// Norm, linear to the level width, GELU, linear.
#[derive(Debug, Clone)]
pub struct SlotMixer {
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl SlotMixer {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, in_dim: usize, out_dim: usize) -> Result<Self> {
        let mut s = b.scope("mixer");
        Ok(Self {
            norm: LayerNorm::new(&mut s, "norm", in_dim)?,
            fc1: Linear::new(&mut s, "fc1", in_dim, out_dim, true)?,
            fc2: Linear::new(&mut s, "fc2", out_dim, out_dim, true)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let h = tape.gelu(&self.fc1.forward(tape, &self.norm.forward(tape, x)?)?)?;
        self.fc2.forward(tape, &h)
    }
}

/// Difference-keyed attention whose slot mixes both streams of one level with
/// the upsampled output of the level below.
#[derive(Debug, Clone)]
pub struct DabUnit {
    pub attention: Option<AttentionUnit>,
    pub mixer: SlotMixer,
    pub dim: usize,
    pub deeper_dim: usize,
}

impl DabUnit {
    /// `with_attention = false` keeps only the slot mixer.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        kind: AttentionKind,
        dim: usize,
        deeper_dim: usize,
        ffn_expansion: usize,
        source_tokens: usize,
        comp_ops: bool,
        with_attention: bool,
    ) -> Result<Self> {
        let op = if comp_ops { CompOp::Difference } else { CompOp::Identity };
        let mixer = SlotMixer::new(b, 2 * dim + deeper_dim, dim)?;
        let attention = if with_attention {
            Some(AttentionUnit::new(b, kind, op, dim, ffn_expansion, source_tokens)?)
        } else {
            None
        };
        Ok(Self {
            attention,
            mixer,
            dim,
            deeper_dim,
        })
    }
}

/// Slot of a difference block: mixer over `[f1 | f2 | up2x(deeper)]`.
pub fn dab_slot<T: Scalar>(
    tape: &Tape<'_, T>,
    u: &DabUnit,
    s: &SourcePair<T>,
    deeper: &Var<T>,
) -> Result<Var<T>> {
    let (h, w) = (s.h, s.w);
    if h % 2 != 0 || w % 2 != 0 || deeper.shape() != [h * w / 4, u.deeper_dim] {
        return Err(Error::InvalidShape {
            shape: deeper.shape().to_vec(),
            reason: format!("deeper features must be [{}×{}] for a {h}×{w} level", h * w / 4, u.deeper_dim),
        });
    }
    let grid = tape.reshape(deeper, &[h / 2, w / 2, u.deeper_dim])?;
    let up = tape.reshape(&tape.bilinear_upsample_2x(&grid)?, &[h * w, u.deeper_dim])?;
    let mixed = tape.concat_cols(&[&s.f1, &s.f2, &up])?;
    u.mixer.forward(tape, &mixed)
}

pub fn dab_forward<T: Scalar>(
    tape: &Tape<'_, T>,
    u: &DabUnit,
    s: &SourcePair<T>,
    deeper: &Var<T>,
) -> Result<Var<T>> {
    let slot = dab_slot(tape, u, s, deeper)?;
    match &u.attention {
        Some(a) => a.forward(tape, s, &slot),
        None => Ok(slot),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::Prototypes;
    use crate::tensor::{ParamStore, Rng, Tensor};

    #[test]
    fn ceb_swaps_outputs_when_inputs_swap() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = Rng::new(1);
        let u = CebUnit::new(&mut ParamBuilder::new(&mut store, &mut rng), AttentionKind::Ada(Prototypes::Fixed(4)), 4, 2, 16, true).unwrap();
        let g = rng.normal_tensor(&[4], 0.5).unwrap();
        store.set_value(u.attention.gamma(), g).unwrap();
        let tape = Tape::inference(&store);
        let a = tape.constant(rng.normal_tensor(&[16, 4], 1.0).unwrap());
        let b = tape.constant(rng.normal_tensor(&[16, 4], 1.0).unwrap());
        let s = SourcePair::new(a, b, 4, 4).unwrap();
        let (x1, x2) = ceb_forward(&tape, &u, &s).unwrap();
        let (y1, y2) = ceb_forward(&tape, &u, &s.swapped()).unwrap();
        assert_eq!(x1.value(), y2.value());
        assert_eq!(x2.value(), y1.value());
    }

    #[test]
    fn dab_rejects_wrong_deeper_extent() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = Rng::new(2);
        let u = DabUnit::new(&mut ParamBuilder::new(&mut store, &mut rng), AttentionKind::Standard, 2, 4, 2, 16, true, true).unwrap();
        let tape = Tape::inference(&store);
        let f = tape.constant(Tensor::zeros(&[16, 2]).unwrap());
        let s = SourcePair::new(f.clone(), f, 4, 4).unwrap();
        let bad = tape.constant(Tensor::zeros(&[16, 4]).unwrap());
        assert!(dab_forward(&tape, &u, &s, &bad).is_err());
        let good = tape.constant(Tensor::zeros(&[4, 4]).unwrap());
        assert_eq!(dab_forward(&tape, &u, &s, &good).unwrap().shape(), &[16, 2]);
    }
}
