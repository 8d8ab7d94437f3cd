//! Reverse-mode differentiation tape.
//!
//! A [`Tape`] borrows a [`ParamStore`] and records every differentiable
//! operation whose inputs depend on a parameter. Values are shared through
//! `Arc`, so in inference mode (nothing recorded) an intermediate is freed as
//! soon as the last [`Var`] referencing it goes out of scope; this is what
//! makes the peak-element counters meaningful for benchmarks.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use super::kernels::{self, Elementwise};
use super::param::{Gradients, ParamId, ParamStore};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// A value flowing through the tape.
#[derive(Clone)]
pub struct Var<T: Scalar> {
    value: Arc<Tensor<T>>,
    node: Option<usize>,
}

impl<T: Scalar> Var<T> {
    /// A value that carries no gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Self {
            value: Arc::new(value),
            node: None,
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        (*self.value).clone()
    }
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("node", &self.node)
            .field("value", &self.value)
            .finish()
    }
}

type Link = Option<usize>;

enum Op<T: Scalar> {
    Leaf(ParamId),
    MatMul(Var<T>, Var<T>),
    MatMulNt(Var<T>, Var<T>),
    Binary(Elementwise, Var<T>, Var<T>),
    AddRow(Link, Link),
    MulRow(Var<T>, Var<T>),
    Scale(Link, T),
    Softmax { x: Link, out: Arc<Tensor<T>> },
    Cosine { q: Var<T>, k: Var<T> },
    LayerNorm {
        x: Link,
        gain: Var<T>,
        bias: Link,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
    },
    Gelu(Var<T>),
    Relu(Var<T>),
    Abs(Var<T>),
    AvgPool { x: Link, window: usize },
    Upsample(Link),
    SpaceToDepth { x: Link, factor: usize },
    Reshape { x: Link, shape: Vec<usize> },
    ConcatCols(Vec<(Link, usize)>),
    ConcatRows(Vec<(Link, usize)>),
    SliceRows { x: Link, start: usize, total: usize },
    SliceCols { x: Link, start: usize, total: usize },
    Sum { x: Link, shape: Vec<usize> },
    Mean { x: Link, shape: Vec<usize> },
    BceLogits { x: Var<T>, target: Arc<Tensor<T>> },
    CrossEntropy { x: Link, probs: Tensor<T>, targets: Vec<usize> },
}

/// Recording context bound to one parameter store.
pub struct Tape<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    recording: bool,
    nodes: RefCell<Vec<Op<T>>>,
    params: RefCell<HashMap<ParamId, Var<T>>>,
}

impl<'s, T: Scalar> Tape<'s, T> {
    /// Tape that records operations for a later [`Tape::backward`].
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self {
            store,
            recording: true,
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    /// Inference-only tape: nothing is recorded and intermediates are freed eagerly.
    pub fn inference(store: &'s ParamStore<T>) -> Self {
        Self {
            recording: false,
            ..Self::new(store)
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameter as a graph leaf. Repeated calls return the same leaf.
    pub fn param(&self, id: ParamId) -> Var<T> {
        if let Some(v) = self.params.borrow().get(&id) {
            return v.clone();
        }
        let value = Arc::clone(&self.store.get(id).value);
        let var = if self.recording {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Op::Leaf(id));
            Var {
                value,
                node: Some(nodes.len() - 1),
            }
        } else {
            Var { value, node: None }
        };
        self.params.borrow_mut().insert(id, var.clone());
        var
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        Var::constant(value)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self, v: &Var<T>) -> Var<T> {
        Var {
            value: Arc::clone(&v.value),
            node: None,
        }
    }

    fn push(
        &self,
        value: Tensor<T>,
        name: &'static str,
        inputs: &[&Var<T>],
        op: impl FnOnce() -> Op<T>,
    ) -> Result<Var<T>> {
        value.ensure_finite(name)?;
        let value = Arc::new(value);
        if self.recording && inputs.iter().any(|v| v.node.is_some()) {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(op());
            Ok(Var {
                value,
                node: Some(nodes.len() - 1),
            })
        } else {
            Ok(Var { value, node: None })
        }
    }

    pub fn matmul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let out = kernels::matmul(&a.value, &b.value)?;
        self.push(out, "matmul", &[a, b], || Op::MatMul(a.clone(), b.clone()))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let out = kernels::matmul_nt(&a.value, &b.value)?;
        self.push(out, "matmul_nt", &[a, b], || Op::MatMulNt(a.clone(), b.clone()))
    }

    pub fn elementwise(&self, op: Elementwise, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let out = kernels::elementwise(op, &a.value, &b.value)?;
        self.push(out, "elementwise", &[a, b], || Op::Binary(op, a.clone(), b.clone()))
    }

    pub fn add(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.elementwise(Elementwise::Add, a, b)
    }

    pub fn sub(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.elementwise(Elementwise::Sub, a, b)
    }

    pub fn mul(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.elementwise(Elementwise::Mul, a, b)
    }

    pub fn absdiff(&self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        self.elementwise(Elementwise::AbsDiff, a, b)
    }

    pub fn add_row(&self, x: &Var<T>, v: &Var<T>) -> Result<Var<T>> {
        let out = kernels::add_row(&x.value, &v.value)?;
        self.push(out, "add_row", &[x, v], || Op::AddRow(x.node, v.node))
    }

    pub fn mul_row(&self, x: &Var<T>, v: &Var<T>) -> Result<Var<T>> {
        let out = kernels::mul_row(&x.value, &v.value)?;
        self.push(out, "mul_row", &[x, v], || Op::MulRow(x.clone(), v.clone()))
    }

    pub fn scale(&self, x: &Var<T>, c: T) -> Result<Var<T>> {
        let out = x.value.map(|v| v * c);
        self.push(out, "scale", &[x], || Op::Scale(x.node, c))
    }

    pub fn softmax_rows(&self, x: &Var<T>) -> Result<Var<T>> {
        let out = kernels::softmax_rows(&x.value)?;
        out.ensure_finite("softmax_rows")?;
        let out = Arc::new(out);
        if self.recording && x.node.is_some() {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Op::Softmax {
                x: x.node,
                out: Arc::clone(&out),
            });
            Ok(Var {
                value: out,
                node: Some(nodes.len() - 1),
            })
        } else {
            Ok(Var {
                value: out,
                node: None,
            })
        }
    }

    pub fn cosine_rows(&self, q: &Var<T>, k: &Var<T>) -> Result<Var<T>> {
        let out = kernels::cosine_rows(&q.value, &k.value)?;
        self.push(out, "cosine_rows", &[q, k], || Op::Cosine {
            q: q.clone(),
            k: k.clone(),
        })
    }

    pub fn layer_norm(&self, x: &Var<T>, gain: &Var<T>, bias: &Var<T>) -> Result<Var<T>> {
        let (xhat, inv_std) = kernels::layer_norm_stats(&x.value)?;
        let out = kernels::add_row(&kernels::mul_row(&xhat, &gain.value)?, &bias.value)?;
        self.push(out, "layer_norm", &[x, gain, bias], || Op::LayerNorm {
            x: x.node,
            gain: gain.clone(),
            bias: bias.node,
            xhat,
            inv_std,
        })
    }

    pub fn gelu(&self, x: &Var<T>) -> Result<Var<T>> {
        let out = x.value.map(kernels::gelu);
        self.push(out, "gelu", &[x], || Op::Gelu(x.clone()))
    }

    pub fn relu(&self, x: &Var<T>) -> Result<Var<T>> {
        let out = x.value.map(|v| v.max(T::zero()));
        self.push(out, "relu", &[x], || Op::Relu(x.clone()))
    }

    pub fn abs(&self, x: &Var<T>) -> Result<Var<T>> {
        let out = x.value.map(|v| v.abs());
        self.push(out, "abs", &[x], || Op::Abs(x.clone()))
    }

    /// Average pooling over a `[h, w, c]` value.
    pub fn avg_pool_2d(&self, x: &Var<T>, window: usize) -> Result<Var<T>> {
        let out = kernels::avg_pool_2d(&x.value, window)?;
        self.push(out, "avg_pool_2d", &[x], || Op::AvgPool { x: x.node, window })
    }

    pub fn bilinear_upsample_2x(&self, x: &Var<T>) -> Result<Var<T>> {
        let out = kernels::bilinear_upsample_2x(&x.value)?;
        self.push(out, "bilinear_upsample_2x", &[x], || Op::Upsample(x.node))
    }

    pub fn space_to_depth(&self, x: &Var<T>, factor: usize) -> Result<Var<T>> {
        let out = kernels::space_to_depth(&x.value, factor)?;
        self.push(out, "space_to_depth", &[x], || Op::SpaceToDepth { x: x.node, factor })
    }

    pub fn reshape(&self, x: &Var<T>, shape: &[usize]) -> Result<Var<T>> {
        let out = (*x.value).clone().reshape(shape)?;
        self.push(out, "reshape", &[x], || Op::Reshape {
            x: x.node,
            shape: x.shape().to_vec(),
        })
    }

    pub fn concat_cols(&self, parts: &[&Var<T>]) -> Result<Var<T>> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|v| &*v.value).collect();
        let out = kernels::concat_cols(&values)?;
        self.push(out, "concat_cols", parts, || {
            Op::ConcatCols(parts.iter().map(|v| (v.node, v.shape()[1])).collect())
        })
    }

    pub fn concat_rows(&self, parts: &[&Var<T>]) -> Result<Var<T>> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|v| &*v.value).collect();
        let out = kernels::concat_rows(&values)?;
        self.push(out, "concat_rows", parts, || {
            Op::ConcatRows(parts.iter().map(|v| (v.node, v.shape()[0])).collect())
        })
    }

    pub fn slice_rows(&self, x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
        let out = kernels::slice_rows(&x.value, start, len)?;
        self.push(out, "slice_rows", &[x], || Op::SliceRows {
            x: x.node,
            start,
            total: x.shape()[0],
        })
    }

    pub fn slice_cols(&self, x: &Var<T>, start: usize, len: usize) -> Result<Var<T>> {
        let out = kernels::slice_cols(&x.value, start, len)?;
        self.push(out, "slice_cols", &[x], || Op::SliceCols {
            x: x.node,
            start,
            total: x.shape()[1],
        })
    }

    pub fn sum(&self, x: &Var<T>) -> Result<Var<T>> {
        let out = Tensor::scalar(x.value.sum());
        self.push(out, "sum", &[x], || Op::Sum {
            x: x.node,
            shape: x.shape().to_vec(),
        })
    }

    pub fn mean(&self, x: &Var<T>) -> Result<Var<T>> {
        let n = T::lit(x.value.len() as f64);
        let out = Tensor::scalar(x.value.sum() / n);
        self.push(out, "mean", &[x], || Op::Mean {
            x: x.node,
            shape: x.shape().to_vec(),
        })
    }

    /// Mean binary cross-entropy of logits against targets in `[0, 1]`.
    pub fn bce_with_logits(&self, x: &Var<T>, target: &Tensor<T>) -> Result<Var<T>> {
        x.value.same_shape(target, "bce_with_logits")?;
        let n = T::lit(x.value.len() as f64);
        let total: T = x
            .value
            .data()
            .iter()
            .zip(target.data())
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let target = Arc::new(target.clone());
        self.push(Tensor::scalar(total / n), "bce_with_logits", &[x], || Op::BceLogits {
            x: x.clone(),
            target,
        })
    }

    /// Mean softmax cross-entropy of `[n × classes]` logits against class indices.
    pub fn cross_entropy(&self, x: &Var<T>, targets: &[usize]) -> Result<Var<T>> {
        let (m, n_cls) = x.value.dims2("cross_entropy")?;
        if targets.len() != m {
            return Err(Error::invalid(format!(
                "cross_entropy: {} targets for {m} rows",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n_cls) {
            return Err(Error::invalid(format!("class index {bad} >= {n_cls} classes")));
        }
        let probs = kernels::softmax_rows(&x.value)?;
        let total: T = probs
            .data()
            .chunks(n_cls)
            .zip(targets)
            .map(|(row, &t)| -(row[t].max(T::min_positive_value())).ln())
            .sum();
        let targets = targets.to_vec();
        let out = Tensor::scalar(total / T::lit(m as f64));
        self.push(out, "cross_entropy", &[x], || Op::CrossEntropy {
            x: x.node,
            probs,
            targets,
        })
    }

    /// Gradients of a scalar `loss` with respect to every parameter leaf.
    /// Clears the tape.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if !loss.value.is_scalar() {
            return Err(Error::NonScalarLoss(loss.shape().to_vec()));
        }
        let nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        self.params.borrow_mut().clear();
        let mut out = Gradients::empty(self.store.len());
        let Some(root) = loss.node else {
            return Ok(out);
        };
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::ones(loss.shape())?);
        for (i, op) in nodes.iter().enumerate().take(root + 1).rev() {
            let Some(g) = grads[i].take() else { continue };
            backprop(op, g, &mut grads, &mut out)?;
        }
        Ok(out)
    }
}

fn acc<T: Scalar>(grads: &mut [Option<Tensor<T>>], link: Link, g: Tensor<T>) -> Result<()> {
    if let Some(i) = link {
        match &mut grads[i] {
            Some(existing) => existing.add_assign(&g)?,
            slot => *slot = Some(g),
        }
    }
    Ok(())
}

fn backprop<T: Scalar>(
    op: &Op<T>,
    g: Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
    out: &mut Gradients<T>,
) -> Result<()> {
    match op {
        Op::Leaf(id) => out.add(*id, g)?,
        Op::MatMul(a, b) => {
            if a.node.is_some() {
                acc(grads, a.node, kernels::matmul_nt(&g, &b.value)?)?;
            }
            if b.node.is_some() {
                acc(grads, b.node, kernels::matmul_tn(&a.value, &g)?)?;
            }
        }
        Op::MatMulNt(a, b) => {
            if a.node.is_some() {
                acc(grads, a.node, kernels::matmul(&g, &b.value)?)?;
            }
            if b.node.is_some() {
                acc(grads, b.node, kernels::matmul_tn(&g, &a.value)?)?;
            }
        }
        Op::Binary(kind, a, b) => match kind {
            Elementwise::Add => {
                if b.node.is_some() {
                    acc(grads, b.node, g.clone())?;
                }
                acc(grads, a.node, g)?;
            }
            Elementwise::Sub => {
                if b.node.is_some() {
                    acc(grads, b.node, g.map(|v| -v))?;
                }
                acc(grads, a.node, g)?;
            }
            Elementwise::Mul => {
                if a.node.is_some() {
                    acc(grads, a.node, g.zip_map(&b.value, "mul", |x, y| x * y)?)?;
                }
                if b.node.is_some() {
                    acc(grads, b.node, g.zip_map(&a.value, "mul", |x, y| x * y)?)?;
                }
            }
            Elementwise::AbsDiff => {
                let signed = Tensor::from_parts(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(a.value.data().iter().zip(b.value.data()))
                        .map(|(&gv, (&x, &y))| gv * sign(x - y))
                        .collect(),
                );
                if b.node.is_some() {
                    acc(grads, b.node, signed.map(|v| -v))?;
                }
                acc(grads, a.node, signed)?;
            }
        },
        Op::AddRow(x, v) => {
            if v.is_some() {
                acc(grads, *v, kernels::col_sum(&g)?)?;
            }
            acc(grads, *x, g)?;
        }
        Op::MulRow(x, v) => {
            if x.node.is_some() {
                acc(grads, x.node, kernels::mul_row(&g, &v.value)?)?;
            }
            if v.node.is_some() {
                let prod = g.zip_map(&x.value, "mul_row", |a, b| a * b)?;
                acc(grads, v.node, kernels::col_sum(&prod)?)?;
            }
        }
        Op::Scale(x, c) => {
            let c = *c;
            acc(grads, *x, g.map(|v| v * c))?;
        }
        Op::Softmax { x, out: y } => {
            let n = *y.shape().last().expect("rank 2");
            let mut gx = Vec::with_capacity(y.len());
            for (grow, yrow) in g.data().chunks(n).zip(y.data().chunks(n)) {
                let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                gx.extend(grow.iter().zip(yrow).map(|(&a, &b)| b * (a - dot)));
            }
            acc(grads, *x, Tensor::from_parts(y.shape().to_vec(), gx))?;
        }
        Op::Cosine { q, k } => {
            let (qn, q_norm) = normalized(&q.value)?;
            let (kn, k_norm) = normalized(&k.value)?;
            if q.node.is_some() {
                let gqn = kernels::matmul(&g, &kn)?;
                acc(grads, q.node, unnormalize_grad(&q.value, &qn, &q_norm, &gqn))?;
            }
            if k.node.is_some() {
                let gkn = kernels::matmul_tn(&g, &qn)?;
                acc(grads, k.node, unnormalize_grad(&k.value, &kn, &k_norm, &gkn))?;
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            if bias.is_some() {
                acc(grads, *bias, kernels::col_sum(&g)?)?;
            }
            if gain.node.is_some() {
                let prod = g.zip_map(xhat, "layer_norm", |a, b| a * b)?;
                acc(grads, gain.node, kernels::col_sum(&prod)?)?;
            }
            if x.is_some() {
                let gxhat = kernels::mul_row(&g, &gain.value)?;
                let c = *xhat.shape().last().expect("rank 2");
                let cn = T::lit(c as f64);
                let mut gx = Vec::with_capacity(g.len());
                for ((grow, xrow), &inv) in gxhat.data().chunks(c).zip(xhat.data().chunks(c)).zip(inv_std) {
                    let mean_g = grow.iter().copied().sum::<T>() / cn;
                    let mean_gx = grow.iter().zip(xrow).map(|(&a, &b)| a * b).sum::<T>() / cn;
                    gx.extend(
                        grow.iter()
                            .zip(xrow)
                            .map(|(&a, &b)| inv * (a - mean_g - b * mean_gx)),
                    );
                }
                acc(grads, *x, Tensor::from_parts(g.shape().to_vec(), gx))?;
            }
        }
        Op::Gelu(x) => {
            let gx = g.zip_map(&x.value, "gelu", |a, v| a * kernels::gelu_grad(v))?;
            acc(grads, x.node, gx)?;
        }
        Op::Relu(x) => {
            let gx = g.zip_map(&x.value, "relu", |a, v| if v > T::zero() { a } else { T::zero() })?;
            acc(grads, x.node, gx)?;
        }
        Op::Abs(x) => {
            let gx = g.zip_map(&x.value, "abs", |a, v| a * sign(v))?;
            acc(grads, x.node, gx)?;
        }
        Op::AvgPool { x, window } => acc(grads, *x, kernels::avg_pool_2d_adjoint(&g, *window)?)?,
        Op::Upsample(x) => acc(grads, *x, kernels::bilinear_upsample_2x_adjoint(&g)?)?,
        Op::SpaceToDepth { x, factor } => acc(grads, *x, kernels::depth_to_space(&g, *factor)?)?,
        Op::Reshape { x, shape } => acc(grads, *x, g.reshape(shape)?)?,
        Op::ConcatCols(parts) => {
            let mut start = 0;
            for &(link, width) in parts {
                if link.is_some() {
                    acc(grads, link, kernels::slice_cols(&g, start, width)?)?;
                }
                start += width;
            }
        }
        Op::ConcatRows(parts) => {
            let mut start = 0;
            for &(link, rows) in parts {
                if link.is_some() {
                    acc(grads, link, kernels::slice_rows(&g, start, rows)?)?;
                }
                start += rows;
            }
        }
        Op::SliceRows { x, start, total } => {
            let (rows, n) = g.dims2("slice_rows")?;
            let mut full = vec![T::zero(); total * n];
            full[start * n..(start + rows) * n].copy_from_slice(g.data());
            acc(grads, *x, Tensor::from_parts(vec![*total, n], full))?;
        }
        Op::SliceCols { x, start, total } => {
            let (m, w) = g.dims2("slice_cols")?;
            let mut full = vec![T::zero(); m * total];
            for (dst, src) in full.chunks_mut(*total).zip(g.data().chunks(w)) {
                dst[*start..*start + w].copy_from_slice(src);
            }
            acc(grads, *x, Tensor::from_parts(vec![m, *total], full))?;
        }
        Op::Sum { x, shape } => acc(grads, *x, Tensor::full(shape, g.item())?)?,
        Op::Mean { x, shape } => {
            let n: usize = shape.iter().product();
            acc(grads, *x, Tensor::full(shape, g.item() / T::lit(n as f64))?)?;
        }
        Op::BceLogits { x, target } => {
            let scale = g.item() / T::lit(target.len() as f64);
            let gx = x.value.zip_map(target, "bce_with_logits", |z, t| {
                let sig = T::one() / (T::one() + (-z).exp());
                (sig - t) * scale
            })?;
            acc(grads, x.node, gx)?;
        }
        Op::CrossEntropy { x, probs, targets } => {
            let n_cls = probs.shape()[1];
            let scale = g.item() / T::lit(targets.len() as f64);
            let mut gx = probs.data().to_vec();
            for (row, &t) in gx.chunks_mut(n_cls).zip(targets) {
                row[t] = row[t] - T::one();
                row.iter_mut().for_each(|v| *v = *v * scale);
            }
            acc(grads, *x, Tensor::from_parts(probs.shape().to_vec(), gx))?;
        }
    }
    Ok(())
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn normalized<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
    let norms = kernels::row_norms(x)?;
    let inv: Vec<T> = norms.iter().map(|&v| v.recip()).collect();
    Ok((kernels::scale_rows(x, &inv), norms))
}

/// Pulls a gradient w.r.t. normalized rows back to the raw rows. Rows whose
/// norm hit the clamp are treated as divided by a constant.
fn unnormalize_grad<T: Scalar>(raw: &Tensor<T>, unit: &Tensor<T>, norms: &[T], g_unit: &Tensor<T>) -> Tensor<T> {
    let d = *raw.shape().last().expect("rank 2");
    let eps = T::lit(kernels::COSINE_EPS);
    let mut out = Vec::with_capacity(raw.len());
    for ((urow, grow), (&norm, rrow)) in unit
        .data()
        .chunks(d)
        .zip(g_unit.data().chunks(d))
        .zip(norms.iter().zip(raw.data().chunks(d)))
    {
        let raw_norm = rrow.iter().map(|&v| v * v).sum::<T>().sqrt();
        if raw_norm < eps {
            out.extend(grow.iter().map(|&gv| gv / norm));
        } else {
            let dot: T = urow.iter().zip(grow).map(|(&u, &gv)| u * gv).sum();
            out.extend(urow.iter().zip(grow).map(|(&u, &gv)| (gv - u * dot) / norm));
        }
    }
    Tensor::from_parts(raw.shape().to_vec(), out)
}
