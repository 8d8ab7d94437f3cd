//! Small layer building blocks shared by the attention units and the model.

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Rng, Scalar, Tape, Tensor, Var};

/// Standard deviation of the truncated-normal weight initializer.
pub const INIT_STD: f64 = 0.02;

/// Registers named parameters into a store, drawing initial values from one
/// seeded stream.
pub struct ParamBuilder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut Rng,
    prefix: String,
}

impl<'a, T: Scalar> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// Child builder whose parameter names are prefixed with `name.`.
    pub fn scope(&mut self, name: &str) -> ParamBuilder<'_, T> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        ParamBuilder {
            store: &mut *self.store,
            rng: &mut *self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn weight(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let t = self.rng.trunc_normal_tensor(shape, INIT_STD)?;
        Ok(self.store.add(self.full_name(name), t))
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let t = Tensor::zeros(shape)?;
        Ok(self.store.add(self.full_name(name), t))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let t = Tensor::ones(shape)?;
        Ok(self.store.add(self.full_name(name), t))
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let mut s = b.scope(name);
        let weight = s.weight("weight", &[in_dim, out_dim])?;
        let bias = if bias { Some(s.zeros("bias", &[out_dim])?) } else { None };
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let y = tape.matmul(x, &tape.param(self.weight))?;
        match self.bias {
            Some(b) => tape.add_row(&y, &tape.param(b)),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, dim: usize) -> Result<Self> {
        let mut s = b.scope(name);
        Ok(Self {
            gain: s.ones("gain", &[dim])?,
            bias: s.zeros("bias", &[dim])?,
            dim,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        tape.layer_norm(x, &tape.param(self.gain), &tape.param(self.bias))
    }
}

/// Layer norm, expand to `r·dim`, GELU, project back to `dim`.
#[derive(Debug, Clone)]
pub struct Ffn {
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Ffn {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, dim: usize, expansion: usize) -> Result<Self> {
        let mut s = b.scope(name);
        let hidden = dim * expansion.max(1);
        Ok(Self {
            norm: LayerNorm::new(&mut s, "norm", dim)?,
            fc1: Linear::new(&mut s, "fc1", dim, hidden, true)?,
            fc2: Linear::new(&mut s, "fc2", hidden, dim, true)?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let h = self.norm.forward(tape, x)?;
        let h = tape.gelu(&self.fc1.forward(tape, &h)?)?;
        self.fc2.forward(tape, &h)
    }
}
