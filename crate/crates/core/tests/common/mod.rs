//! Straight-line reference math on nested vectors, written independently of
//! the tensor kernels.
#![allow(dead_code)]

use comptr::attention::{AdaWeights, CompOpsWeights, StdAttentionWeights};
use comptr::nn::{Ffn, LayerNorm, Linear};
use comptr::tensor::{ParamId, ParamStore, Rng, Tensor};

pub type M = Vec<Vec<f64>>;

pub fn mat(t: &Tensor<f64>) -> M {
    let n = *t.shape().last().unwrap();
    t.data().chunks(n).map(|r| r.to_vec()).collect()
}

pub fn to_tensor(m: &M) -> Tensor<f64> {
    let rows: Vec<&[f64]> = m.iter().map(|r| r.as_slice()).collect();
    Tensor::from_rows(&rows).unwrap()
}

pub fn vector(store: &ParamStore<f64>, id: ParamId) -> Vec<f64> {
    store.value(id).data().to_vec()
}

pub fn param(store: &ParamStore<f64>, id: ParamId) -> M {
    mat(store.value(id))
}

/// Overwrites every parameter with N(0, std²) draws so no gate or norm is at
/// its trivial initial value.
pub fn randomize(store: &mut ParamStore<f64>, seed: u64, std: f64) {
    let mut rng = Rng::new(seed);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let shape = store.value(id).shape().to_vec();
        let t = rng.normal_tensor(&shape, std).unwrap();
        store.set_value(id, t).unwrap();
    }
}

pub fn mm(a: &M, b: &M) -> M {
    let inner = b.len();
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), inner);
            (0..b[0].len()).map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum()).collect()
        })
        .collect()
}

pub fn transpose(a: &M) -> M {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn row_op(a: &M, v: &[f64], f: impl Fn(f64, f64) -> f64) -> M {
    a.iter().map(|r| r.iter().zip(v).map(|(&x, &y)| f(x, y)).collect()).collect()
}

pub fn cosine(a: &M, b: &M) -> M {
    let norm = |r: &Vec<f64>| r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
    a.iter()
        .map(|x| {
            b.iter()
                .map(|y| {
                    let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
                    (dot / (norm(x) * norm(y))).clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect()
}

pub fn softmax(a: &M) -> M {
    a.iter()
        .map(|r| {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect()
}

pub fn layer_norm(a: &M, gain: &[f64], bias: &[f64]) -> M {
    a.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = (var + 1e-5).sqrt();
            r.iter().enumerate().map(|(i, v)| (v - mean) / sd * gain[i] + bias[i]).collect()
        })
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn linear(store: &ParamStore<f64>, l: &Linear, x: &M) -> M {
    let y = mm(x, &param(store, l.weight));
    match l.bias {
        Some(b) => row_op(&y, &vector(store, b), |p, q| p + q),
        None => y,
    }
}

pub fn norm(store: &ParamStore<f64>, n: &LayerNorm, x: &M) -> M {
    layer_norm(x, &vector(store, n.gain), &vector(store, n.bias))
}

pub fn ffn(store: &ParamStore<f64>, f: &Ffn, x: &M) -> M {
    let h = linear(store, &f.fc1, &norm(store, &f.norm, x));
    let h: M = h.iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect();
    linear(store, &f.fc2, &h)
}

/// Mean over the in-bounds part of a `window × window` neighbourhood.
pub fn pool(x: &M, h: usize, w: usize, window: usize) -> M {
    let r = (window / 2) as isize;
    let c = x[0].len();
    let mut out = vec![vec![0.0; c]; h * w];
    for i in 0..h as isize {
        for j in 0..w as isize {
            let mut n = 0.0;
            for di in -r..=r {
                for dj in -r..=r {
                    let (y, xx) = (i + di, j + dj);
                    if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                        continue;
                    }
                    n += 1.0;
                    for ch in 0..c {
                        out[(i as usize) * w + j as usize][ch] += x[(y as usize) * w + xx as usize][ch];
                    }
                }
            }
            for v in &mut out[(i as usize) * w + j as usize] {
                *v /= n;
            }
        }
    }
    out
}

pub fn comp_embed(store: &ParamStore<f64>, cw: &CompOpsWeights, base: &M, h: usize, w: usize) -> (M, M) {
    let p1 = pool(base, h, w, 3);
    let p2 = pool(base, h, w, 5);
    let cat: M = (0..base.len())
        .map(|i| [base[i].clone(), p1[i].clone(), p2[i].clone()].concat())
        .collect();
    let kv = linear(store, &cw.proj, &norm(store, &cw.norm, &cat));
    let d = cw.proto_dim;
    (
        kv.iter().map(|r| r[..d].to_vec()).collect(),
        kv.iter().map(|r| r[d..].to_vec()).collect(),
    )
}

pub fn product(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).collect()).collect()
}

pub fn abs_diff(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).collect()).collect()
}

pub fn ada_aggregate(store: &ParamStore<f64>, w: &AdaWeights, k: &M, v: &M) -> M {
    let q = linear(store, &w.q_fw, &param(store, w.prototypes));
    let a = softmax(&cosine(&q, k));
    ffn(store, &w.ffn_fw, &linear(store, &w.o_fw, &mm(&a, v)))
}

pub fn ada_diffuse(store: &ParamStore<f64>, w: &AdaWeights, p: &M, slot: &M) -> M {
    let q = linear(store, &w.q_bw, slot);
    let k = linear(store, &w.k_bw, p);
    let v = linear(store, &w.v_bw, p);
    let a = softmax(&cosine(&q, &k));
    let z = linear(store, &w.o_bw, &mm(&a, &v));
    let gated = add(slot, &row_op(&z, &vector(store, w.gamma), |p, q| p * q));
    add(slot, &ffn(store, &w.ffn_bw, &gated))
}

pub fn dense_attention(store: &ParamStore<f64>, w: &StdAttentionWeights, k: &M, v: &M, slot: &M) -> M {
    let q = linear(store, &w.q, slot);
    let k = linear(store, &w.k, k);
    let v = linear(store, &w.v, v);
    let scale = 1.0 / (w.proto_dim as f64).sqrt();
    let logits: M = mm(&q, &transpose(&k)).iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
    let z = linear(store, &w.o, &mm(&softmax(&logits), &v));
    let gated = add(slot, &row_op(&z, &vector(store, w.gamma), |p, q| p * q));
    add(slot, &ffn(store, &w.ffn, &gated))
}

pub fn max_abs_diff(a: &M, b: &M) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// Half-pixel-centre bilinear 2× upsampling of a row-major `h × w` grid.
pub fn upsample2x(x: &M, h: usize, w: usize) -> M {
    let coord = |o: usize, n: usize| {
        let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, src - i0 as f64)
    };
    let c = x[0].len();
    let mut out = Vec::with_capacity(4 * h * w);
    for oy in 0..2 * h {
        let (y0, y1, wy) = coord(oy, h);
        for ox in 0..2 * w {
            let (x0, x1, wx) = coord(ox, w);
            out.push(
                (0..c)
                    .map(|ch| {
                        let v = |y: usize, xx: usize| x[y * w + xx][ch];
                        (1.0 - wy) * ((1.0 - wx) * v(y0, x0) + wx * v(y0, x1)) + wy * ((1.0 - wx) * v(y1, x0) + wx * v(y1, x1))
                    })
                    .collect(),
            );
        }
    }
    out
}

pub fn concat_cols(parts: &[&M]) -> M {
    (0..parts[0].len()).map(|i| parts.iter().flat_map(|p| p[i].clone()).collect()).collect()
}
