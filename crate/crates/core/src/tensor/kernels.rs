//! Pure forward kernels and the adjoints used by backward rules.
//!
//! Spatial kernels take `[h, w, c]` tensors laid out row-major, which is the
//! same buffer as the `[h*w, c]` token matrix used by the attention code.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Clamp applied to row norms in [`cosine_rows`].
pub const COSINE_EPS: f64 = 1e-8;
/// Variance epsilon of [`layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

static PARALLEL_MATMUL: AtomicBool = AtomicBool::new(false);
const PARALLEL_MIN_WORK: usize = 1 << 18;

/// Opt into row-parallel matmul. Off by default; benchmark timings record it.
pub fn set_parallel_matmul(enabled: bool) {
    PARALLEL_MATMUL.store(enabled, Ordering::Relaxed);
}

pub fn parallel_matmul() -> bool {
    PARALLEL_MATMUL.load(Ordering::Relaxed)
}

fn mismatch<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// Accumulates `a_row · b` into `out_row`, in fixed `t` order.
#[inline]
fn gemv_row<T: Scalar>(a_row: &[T], b: &[T], n: usize, out_row: &mut [T]) {
    for (t, &av) in a_row.iter().enumerate() {
        if av == T::zero() {
            continue;
        }
        let b_row = &b[t * n..(t + 1) * n];
        for (o, &bv) in out_row.iter_mut().zip(b_row) {
            *o = *o + av * bv;
        }
    }
}

fn gemm<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    if parallel_matmul() && m * k * n >= PARALLEL_MIN_WORK && m > 1 {
        out.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(o, ar)| gemv_row(ar, b, n, o));
    } else {
        for (o, ar) in out.chunks_mut(n).zip(a.chunks(k)) {
            gemv_row(ar, b, n, o);
        }
    }
    out
}

/// `c = a · b` for `a: [m×k]`, `b: [k×n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(mismatch("matmul", a, b));
    }
    Ok(Tensor::from_parts(vec![m, n], gemm(a.data(), b.data(), m, k, n)))
}

pub fn transpose<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = x.dims2("transpose")?;
    let src = x.data();
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

/// `c = a · bᵀ` for `a: [m×k]`, `b: [n×k]`.
pub fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = a.dims2("matmul_nt")?;
    let (_, k2) = b.dims2("matmul_nt")?;
    if k != k2 {
        return Err(mismatch("matmul_nt", a, b));
    }
    matmul(a, &transpose(b)?)
}

/// `c = aᵀ · b` for `a: [k×m]`, `b: [k×n]`.
pub fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, m) = a.dims2("matmul_tn")?;
    let (k2, n) = b.dims2("matmul_tn")?;
    if k != k2 {
        return Err(mismatch("matmul_tn", a, b));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for t in 0..k {
        let b_row = &bd[t * n..(t + 1) * n];
        for i in 0..m {
            let av = ad[t * m + i];
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    AbsDiff,
}

impl Elementwise {
    fn name(self) -> &'static str {
        match self {
            Elementwise::Add => "add",
            Elementwise::Sub => "sub",
            Elementwise::Mul => "mul",
            Elementwise::AbsDiff => "absdiff",
        }
    }
}

pub fn elementwise<T: Scalar>(op: Elementwise, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let name = op.name();
    match op {
        Elementwise::Add => a.zip_map(b, name, |x, y| x + y),
        Elementwise::Sub => a.zip_map(b, name, |x, y| x - y),
        Elementwise::Mul => a.zip_map(b, name, |x, y| x * y),
        Elementwise::AbsDiff => a.zip_map(b, name, |x, y| (x - y).abs()),
    }
}

/// `x[i, :] + v` for every row.
pub fn add_row<T: Scalar>(x: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    row_broadcast(x, v, "add_row", |a, b| a + b)
}

/// `x[i, :] ⊙ v` for every row.
pub fn mul_row<T: Scalar>(x: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    row_broadcast(x, v, "mul_row", |a, b| a * b)
}

fn row_broadcast<T: Scalar>(
    x: &Tensor<T>,
    v: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let (_, n) = x.dims2(op)?;
    if v.shape() != [n] {
        return Err(mismatch(op, x, v));
    }
    let vd = v.data();
    let data = x
        .data()
        .chunks(n)
        .flat_map(|row| row.iter().zip(vd).map(|(&a, &b)| f(a, b)))
        .collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}

/// Column sums of a rank-2 tensor, shape `[n]`.
pub fn col_sum<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, n) = x.dims2("col_sum")?;
    let mut out = vec![T::zero(); n];
    for row in x.data().chunks(n) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    Ok(Tensor::from_parts(vec![n], out))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, n) = x.dims2("softmax_rows")?;
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        let inv = T::one() / total;
        for v in row.iter_mut() {
            *v = *v * inv;
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Euclidean norm of every row, clamped below at [`COSINE_EPS`].
pub fn row_norms<T: Scalar>(x: &Tensor<T>) -> Result<Vec<T>> {
    let (_, n) = x.dims2("row_norms")?;
    let eps = T::lit(COSINE_EPS);
    Ok(x.data()
        .chunks(n)
        .map(|r| r.iter().map(|&v| v * v).sum::<T>().sqrt().max(eps))
        .collect())
}

pub(crate) fn scale_rows<T: Scalar>(x: &Tensor<T>, factors: &[T]) -> Tensor<T> {
    let n = *x.shape().last().expect("rank >= 1");
    let data = x
        .data()
        .chunks(n)
        .zip(factors)
        .flat_map(|(row, &f)| row.iter().map(move |&v| v * f))
        .collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Pairwise cosine similarity `out[i, j] = <q_i, k_j> / (|q_i| |k_j|)`.
///
/// Norms are clamped below at [`COSINE_EPS`], so a zero row yields zeros
/// instead of NaN. Outputs are clamped to `[-1, 1]` to absorb rounding.
pub fn cosine_rows<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, d) = q.dims2("cosine_rows")?;
    let (_, d2) = k.dims2("cosine_rows")?;
    if d != d2 {
        return Err(mismatch("cosine_rows", q, k));
    }
    let qn = scale_rows(q, &row_norms(q)?.iter().map(|&v| v.recip()).collect::<Vec<_>>());
    let kn = scale_rows(k, &row_norms(k)?.iter().map(|&v| v.recip()).collect::<Vec<_>>());
    let out = matmul_nt(&qn, &kn)?;
    Ok(out.map(|v| v.max(-T::one()).min(T::one())))
}

/// Normalized rows and inverse standard deviations for [`layer_norm`].
pub(crate) fn layer_norm_stats<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
    let (_, c) = x.dims2("layer_norm")?;
    let cn = T::lit(c as f64);
    let eps = T::lit(LAYER_NORM_EPS);
    let mut xhat = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(x.len() / c);
    for row in x.data().chunks(c) {
        let mean = row.iter().copied().sum::<T>() / cn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cn;
        let inv = (var + eps).sqrt().recip();
        inv_std.push(inv);
        xhat.extend(row.iter().map(|&v| (v - mean) * inv));
    }
    Ok((Tensor::from_parts(x.shape().to_vec(), xhat), inv_std))
}

/// Per-row normalization to zero mean and unit variance, then `gain`/`bias`.
pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (xhat, _) = layer_norm_stats(x)?;
    add_row(&mul_row(&xhat, gain)?, bias)
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let inner = T::lit(GELU_K) * (x + T::lit(GELU_C) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    let inner = T::lit(GELU_K) * (x + T::lit(GELU_C) * x * x * x);
    let t = inner.tanh();
    let dinner = T::lit(GELU_K) * (T::one() + T::lit(3.0 * GELU_C) * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

fn check_window(window: usize) -> Result<usize> {
    if window % 2 == 0 {
        return Err(Error::invalid(format!("pooling window must be odd, got {window}")));
    }
    Ok(window / 2)
}

/// One separable pass of count-of-valid averaging along an axis.
/// `axis_len`/`stride` select the axis inside a `[h, w, c]` buffer.
fn pool_axis<T: Scalar>(
    src: &[T],
    dst: &mut [T],
    outer: usize,
    axis_len: usize,
    stride: usize,
    radius: usize,
    transpose: bool,
) {
    for o in 0..outer {
        for s in 0..stride {
            let base = o * axis_len * stride + s;
            for i in 0..axis_len {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius).min(axis_len - 1);
                let inv = T::one() / T::lit((hi - lo + 1) as f64);
                if transpose {
                    let g = src[base + i * stride] * inv;
                    for j in lo..=hi {
                        let d = &mut dst[base + j * stride];
                        *d = *d + g;
                    }
                } else {
                    let mut acc = T::zero();
                    for j in lo..=hi {
                        acc = acc + src[base + j * stride];
                    }
                    dst[base + i * stride] = acc * inv;
                }
            }
        }
    }
}

/// Stride-1, shape-preserving average pooling with an odd square window.
/// Border outputs average only the in-bounds inputs.
pub fn avg_pool_2d<T: Scalar>(x: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let (h, w, c) = x.dims3("avg_pool_2d")?;
    let r = check_window(window)?;
    if r == 0 {
        return Ok(x.clone());
    }
    let mut tmp = vec![T::zero(); x.len()];
    pool_axis(x.data(), &mut tmp, h, w, c, r, false);
    let mut out = vec![T::zero(); x.len()];
    pool_axis(&tmp, &mut out, 1, h, w * c, r, false);
    Ok(Tensor::from_parts(vec![h, w, c], out))
}

/// Adjoint of [`avg_pool_2d`].
pub fn avg_pool_2d_adjoint<T: Scalar>(g: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let (h, w, c) = g.dims3("avg_pool_2d")?;
    let r = check_window(window)?;
    if r == 0 {
        return Ok(g.clone());
    }
    let mut tmp = vec![T::zero(); g.len()];
    pool_axis(g.data(), &mut tmp, 1, h, w * c, r, true);
    let mut out = vec![T::zero(); g.len()];
    pool_axis(&tmp, &mut out, h, w, c, r, true);
    Ok(Tensor::from_parts(vec![h, w, c], out))
}

/// Source taps `(i0, i1, frac)` for 2x half-pixel (align-corners false) upsampling.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear 2x upsampling, `[h, w, c] -> [2h, 2w, c]`.
pub fn bilinear_upsample_2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = x.dims3("bilinear_upsample_2x")?;
    let (ty, tx) = (upsample_taps(h), upsample_taps(w));
    let src = x.data();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); oh * ow * c];
    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
        let (fy, gy) = (T::lit(fy), T::lit(1.0 - fy));
        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
            let (fx, gx) = (T::lit(fx), T::lit(1.0 - fx));
            let weights = [(y0, x0, gy * gx), (y0, x1, gy * fx), (y1, x0, fy * gx), (y1, x1, fy * fx)];
            let dst = &mut out[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
            for (yy, xx, wt) in weights {
                if wt == T::zero() {
                    continue;
                }
                let s = &src[(yy * w + xx) * c..(yy * w + xx + 1) * c];
                for (d, &v) in dst.iter_mut().zip(s) {
                    *d = *d + wt * v;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![oh, ow, c], out))
}

/// Adjoint of [`bilinear_upsample_2x`], `[2h, 2w, c] -> [h, w, c]`.
pub fn bilinear_upsample_2x_adjoint<T: Scalar>(g: &Tensor<T>) -> Result<Tensor<T>> {
    let (oh, ow, c) = g.dims3("bilinear_upsample_2x")?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(Error::InvalidShape {
            shape: g.shape().to_vec(),
            reason: "upsample adjoint needs even extents".into(),
        });
    }
    let (h, w) = (oh / 2, ow / 2);
    let (ty, tx) = (upsample_taps(h), upsample_taps(w));
    let src = g.data();
    let mut out = vec![T::zero(); h * w * c];
    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
        let (fy, gy) = (T::lit(fy), T::lit(1.0 - fy));
        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
            let (fx, gx) = (T::lit(fx), T::lit(1.0 - fx));
            let weights = [(y0, x0, gy * gx), (y0, x1, gy * fx), (y1, x0, fy * gx), (y1, x1, fy * fx)];
            let s = &src[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
            for (yy, xx, wt) in weights {
                if wt == T::zero() {
                    continue;
                }
                let dst = &mut out[(yy * w + xx) * c..(yy * w + xx + 1) * c];
                for (d, &v) in dst.iter_mut().zip(s) {
                    *d = *d + wt * v;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![h, w, c], out))
}

/// Rearranges `f×f` spatial blocks into channels:
/// `[h, w, c] -> [h/f, w/f, f*f*c]`, channel index `(dy*f + dx)*c + ch`.
pub fn space_to_depth<T: Scalar>(x: &Tensor<T>, f: usize) -> Result<Tensor<T>> {
    let (h, w, c) = x.dims3("space_to_depth")?;
    if f == 0 || h % f != 0 || w % f != 0 {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: format!("spatial extents must be divisible by {f}"),
        });
    }
    let (oh, ow) = (h / f, w / f);
    let src = x.data();
    let mut out = Vec::with_capacity(x.len());
    for y in 0..oh {
        for xx in 0..ow {
            for dy in 0..f {
                for dx in 0..f {
                    let s = ((y * f + dy) * w + xx * f + dx) * c;
                    out.extend_from_slice(&src[s..s + c]);
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![oh, ow, f * f * c], out))
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space<T: Scalar>(x: &Tensor<T>, f: usize) -> Result<Tensor<T>> {
    let (oh, ow, fc) = x.dims3("depth_to_space")?;
    if f == 0 || fc % (f * f) != 0 {
        return Err(Error::InvalidShape {
            shape: x.shape().to_vec(),
            reason: format!("channels must be divisible by {}", f * f),
        });
    }
    let c = fc / (f * f);
    let (h, w) = (oh * f, ow * f);
    let src = x.data();
    let mut out = vec![T::zero(); x.len()];
    let mut s = 0;
    for y in 0..oh {
        for xx in 0..ow {
            for dy in 0..f {
                for dx in 0..f {
                    let d = ((y * f + dy) * w + xx * f + dx) * c;
                    out[d..d + c].copy_from_slice(&src[s..s + c]);
                    s += c;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![h, w, c], out))
}

/// Concatenates rank-2 tensors along columns.
pub fn concat_cols<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
    let (m, _) = first.dims2("concat_cols")?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (pm, pn) = p.dims2("concat_cols")?;
        if pm != m {
            return Err(mismatch("concat_cols", first, p));
        }
        widths.push(pn);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(m * total);
    for i in 0..m {
        for (p, &pn) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.data()[i * pn..(i + 1) * pn]);
        }
    }
    Ok(Tensor::from_parts(vec![m, total], out))
}

/// Concatenates rank-2 tensors along rows.
pub fn concat_rows<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
    let (_, n) = first.dims2("concat_rows")?;
    let mut rows = 0;
    for p in parts {
        let (pm, pn) = p.dims2("concat_rows")?;
        if pn != n {
            return Err(mismatch("concat_rows", first, p));
        }
        rows += pm;
    }
    let mut out = Vec::with_capacity(rows * n);
    for p in parts {
        out.extend_from_slice(p.data());
    }
    Ok(Tensor::from_parts(vec![rows, n], out))
}

pub fn slice_rows<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (m, n) = x.dims2("slice_rows")?;
    if len == 0 || start + len > m {
        return Err(Error::invalid(format!("row slice {start}+{len} out of {m}")));
    }
    Ok(Tensor::from_parts(vec![len, n], x.data()[start * n..(start + len) * n].to_vec()))
}

pub fn slice_cols<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (_, n) = x.dims2("slice_cols")?;
    if len == 0 || start + len > n {
        return Err(Error::invalid(format!("column slice {start}+{len} out of {n}")));
    }
    let data = x
        .data()
        .chunks(n)
        .flat_map(|row| row[start..start + len].iter().copied())
        .collect();
    Ok(Tensor::from_parts(vec![x.shape()[0], len], data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let x = Tensor::<f64>::from_fn(&[3, 4], |i| i as f64 * 0.5 - 1.0).unwrap();
        assert_eq!(matmul(&Tensor::identity(3).unwrap(), &x).unwrap(), x);

        let c = matmul(&t2(&[&[1.0, 2.0], &[3.0, 4.0]]), &t2(&[&[1.0], &[1.0]])).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);

        let k = 17;
        let ones_row = Tensor::<f64>::ones(&[1, k]).unwrap();
        let ones_col = Tensor::<f64>::ones(&[k, 1]).unwrap();
        assert_eq!(matmul(&ones_row, &ones_col).unwrap().data(), &[k as f64]);

        assert!(matmul(&ones_row, &ones_row).is_err());
    }

    #[test]
    fn transposed_products_agree_with_plain_matmul() {
        let a = Tensor::<f64>::from_fn(&[3, 5], |i| (i as f64).sin()).unwrap();
        let b = Tensor::<f64>::from_fn(&[4, 5], |i| (i as f64 * 0.3).cos()).unwrap();
        let nt = matmul_nt(&a, &b).unwrap();
        let plain = matmul(&a, &transpose(&b).unwrap()).unwrap();
        assert_eq!(nt, plain);
        let tn = matmul_tn(&transpose(&a).unwrap(), &transpose(&b).unwrap()).unwrap();
        for (x, y) in tn.data().iter().zip(nt.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_matmul_is_bit_identical() {
        let a = Tensor::<f32>::from_fn(&[128, 64], |i| ((i * 37 % 101) as f32) * 0.01).unwrap();
        let b = Tensor::<f32>::from_fn(&[64, 96], |i| ((i * 13 % 89) as f32) * -0.02).unwrap();
        let seq = matmul(&a, &b).unwrap();
        set_parallel_matmul(true);
        let par = matmul(&a, &b).unwrap();
        set_parallel_matmul(false);
        assert_eq!(seq, par);
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&t2(&[&[2.0, 2.0, 2.0, 2.0]])).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let s = softmax_rows(&t2(&[&[0.0, 3f64.ln()]])).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
        let s = softmax_rows(&t2(&[&[-1e4, 0.0, 2e4], &[1.0, -3.0, 0.5]])).unwrap();
        for row in s.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn cosine_examples() {
        let v = t2(&[&[0.3, -1.2, 2.0]]);
        assert!((cosine_rows(&v, &v).unwrap().item() - 1.0).abs() < 1e-15);
        let c = cosine_rows(&t2(&[&[1.0, 0.0]]), &t2(&[&[0.0, 5.0]])).unwrap();
        assert_eq!(c.item(), 0.0);
        let c = cosine_rows(&t2(&[&[1.0, 0.0]]), &t2(&[&[1.0, 1.0]])).unwrap();
        assert!((c.item() - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        let z = cosine_rows(&t2(&[&[0.0, 0.0]]), &t2(&[&[1.0, 1.0]])).unwrap();
        assert_eq!(z.item(), 0.0);
    }

    #[test]
    fn layer_norm_examples() {
        let ones = Tensor::<f64>::ones(&[3]).unwrap();
        let zeros = Tensor::<f64>::zeros(&[3]).unwrap();
        let y = layer_norm(&t2(&[&[4.0, 4.0, 4.0]]), &ones, &zeros).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let x = t2(&[&[1.0, 5.0, -2.0], &[0.1, 0.2, 0.4]]);
        let y = layer_norm(&x, &ones, &zeros).unwrap();
        for row in y.data().chunks(3) {
            let mean = row.iter().sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-5);
        }

        let bias = t2(&[&[0.5, -1.0, 2.0]]).reshape(&[3]).unwrap();
        let y = layer_norm(&x, &zeros, &bias).unwrap();
        for row in y.data().chunks(3) {
            assert_eq!(row, bias.data());
        }
    }

    fn brute_pool(x: &Tensor<f64>, window: usize) -> Tensor<f64> {
        let (h, w, c) = x.dims3("test").unwrap();
        let r = (window / 2) as isize;
        Tensor::from_fn(&[h, w, c], |flat| {
            let (y, xx, ch) = (flat / (w * c), (flat / c) % w, flat % c);
            let (mut sum, mut n) = (0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xk) = (y as isize + dy, xx as isize + dx);
                    if yy >= 0 && xk >= 0 && (yy as usize) < h && (xk as usize) < w {
                        sum += x.at(&[yy as usize, xk as usize, ch]);
                        n += 1.0;
                    }
                }
            }
            sum / n
        })
        .unwrap()
    }

    #[test]
    fn avg_pool_examples() {
        let c = Tensor::<f64>::full(&[5, 4, 2], 3.5).unwrap();
        for wdw in [3, 5] {
            for v in avg_pool_2d(&c, wdw).unwrap().data() {
                assert!((v - 3.5).abs() < 1e-12);
            }
        }
        let mut impulse = Tensor::<f64>::zeros(&[5, 5, 1]).unwrap();
        impulse.data_mut()[2 * 5 + 2] = 1.0;
        let p = avg_pool_2d(&impulse, 3).unwrap();
        for y in 1..4 {
            for x in 1..4 {
                assert!((p.at(&[y, x, 0]) - 1.0 / 9.0).abs() < 1e-15);
            }
        }
        assert_eq!(p.at(&[0, 0, 0]), 0.0);
        let x = Tensor::<f64>::from_fn(&[4, 3, 2], |i| i as f64).unwrap();
        assert_eq!(avg_pool_2d(&x, 1).unwrap(), x);
        assert!(avg_pool_2d(&x, 4).is_err());
    }

    #[test]
    fn avg_pool_matches_brute_force_and_adjoint() {
        let x = Tensor::<f64>::from_fn(&[6, 7, 3], |i| ((i * 7919) % 113) as f64 / 50.0 - 1.0).unwrap();
        let g = Tensor::<f64>::from_fn(&[6, 7, 3], |i| ((i * 31) % 17) as f64 / 9.0 - 0.8).unwrap();
        for wdw in [3, 5] {
            let fast = avg_pool_2d(&x, wdw).unwrap();
            let slow = brute_pool(&x, wdw);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
            // <P x, g> == <x, Pᵀ g>
            let lhs: f64 = fast.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let adj = avg_pool_2d_adjoint(&g, wdw).unwrap();
            let rhs: f64 = x.data().iter().zip(adj.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn upsample_examples() {
        let c = Tensor::<f64>::full(&[3, 2, 2], -1.25).unwrap();
        assert!(bilinear_upsample_2x(&c).unwrap().data().iter().all(|&v| v == -1.25));

        let one = Tensor::<f64>::new(&[1, 1, 2], vec![0.5, 2.0]).unwrap();
        let up = bilinear_upsample_2x(&one).unwrap();
        assert_eq!(up.shape(), &[2, 2, 2]);
        assert_eq!(up.data(), &[0.5, 2.0, 0.5, 2.0, 0.5, 2.0, 0.5, 2.0]);

        let col = Tensor::<f64>::new(&[2, 1, 1], vec![0.0, 1.0]).unwrap();
        let up = bilinear_upsample_2x(&col).unwrap();
        assert_eq!(up.shape(), &[4, 2, 1]);
        assert_eq!(up.data(), &[0.0, 0.0, 0.25, 0.25, 0.75, 0.75, 1.0, 1.0]);
    }

    #[test]
    fn upsample_adjoint_identity() {
        let x = Tensor::<f64>::from_fn(&[3, 5, 2], |i| (i as f64 * 0.7).sin()).unwrap();
        let g = Tensor::<f64>::from_fn(&[6, 10, 2], |i| (i as f64 * 0.3).cos()).unwrap();
        let up = bilinear_upsample_2x(&x).unwrap();
        let lhs: f64 = up.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let adj = bilinear_upsample_2x_adjoint(&g).unwrap();
        let rhs: f64 = x.data().iter().zip(adj.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn space_depth_roundtrip() {
        let x = Tensor::<f64>::from_fn(&[8, 4, 3], |i| i as f64).unwrap();
        let s = space_to_depth(&x, 2).unwrap();
        assert_eq!(s.shape(), &[4, 2, 12]);
        assert_eq!(s.at(&[1, 1, 3 * 3 + 2]), x.at(&[3, 3, 2]));
        assert_eq!(depth_to_space(&s, 2).unwrap(), x);
        assert!(space_to_depth(&x, 3).is_err());
    }

    #[test]
    fn elementwise_examples() {
        let a = t2(&[&[1.0, -2.0]]);
        let b = t2(&[&[3.0, 1.0]]);
        assert_eq!(elementwise(Elementwise::AbsDiff, &a, &b).unwrap().data(), &[2.0, 3.0]);
        assert!(elementwise(Elementwise::AbsDiff, &a, &a).unwrap().data().iter().all(|&v| v == 0.0));
        let ones = Tensor::ones(&[1, 2]).unwrap();
        assert_eq!(elementwise(Elementwise::Mul, &a, &ones).unwrap(), a);
        assert!(elementwise(Elementwise::Add, &a, &t2(&[&[1.0]])).is_err());
    }

    #[test]
    fn concat_and_slice() {
        let a = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = t2(&[&[5.0], &[6.0]]);
        let c = concat_cols(&[&a, &b]).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        assert_eq!(slice_cols(&c, 2, 1).unwrap(), b);
        let r = concat_rows(&[&a, &a]).unwrap();
        assert_eq!(r.shape(), &[4, 2]);
        assert_eq!(slice_rows(&r, 2, 2).unwrap(), a);
    }
}
