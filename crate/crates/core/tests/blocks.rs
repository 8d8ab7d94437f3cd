mod common;

use common::*;
use comptr::attention::{aggregate, comp_difference, AttentionKind, AttentionUnit, Prototypes, SourcePair};
use comptr::blocks::*;
use comptr::nn::ParamBuilder;
use comptr::tensor::{grad_check, GradCheckConfig, ParamStore, Rng, Tape, Tensor};

const K4: AttentionKind = AttentionKind::Ada(Prototypes::Fixed(4));

fn ada(u: &AttentionUnit) -> &comptr::attention::AdaWeights {
    match u {
        AttentionUnit::Ada(w) => w,
        AttentionUnit::Standard(_) => panic!("expected an ADA unit"),
    }
}

fn ceb(seed: u64, dim: usize, tokens: usize) -> (ParamStore<f64>, CebUnit) {
    let mut store = ParamStore::new();
    let mut rng = Rng::new(seed);
    let u = CebUnit::new(&mut ParamBuilder::new(&mut store, &mut rng), K4, dim, 2, tokens, true).unwrap();
    (store, u)
}

fn dab(seed: u64, dim: usize, deeper: usize, tokens: usize) -> (ParamStore<f64>, DabUnit) {
    let mut store = ParamStore::new();
    let mut rng = Rng::new(seed);
    let u = DabUnit::new(&mut ParamBuilder::new(&mut store, &mut rng), K4, dim, deeper, 2, tokens, true, true).unwrap();
    (store, u)
}

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    rng.normal_tensor(shape, 1.0).unwrap()
}

#[test]
fn ceb_with_zero_gate_keeps_streams_apart() {
    let (store, u) = ceb(1, 8, 16);
    let mut rng = Rng::new(2);
    let (a, b) = (random(&mut rng, &[16, 8]), random(&mut rng, &[16, 8]));
    let tape = Tape::inference(&store);
    let s = SourcePair::new(tape.constant(a.clone()), tape.constant(b.clone()), 4, 4).unwrap();
    let (x1, x2) = ceb_forward(&tape, &u, &s).unwrap();
    let w = ada(&u.attention);
    for (got, src) in [(x1, a), (x2, b)] {
        let m = mat(&src);
        let want = add(&m, &ffn(&store, &w.ffn_bw, &m));
        assert!(max_abs_diff(&mat(got.value()), &want) < 1e-14);
    }
}

#[test]
fn ceb_matches_composed_oracle() {
    for seed in 0..5 {
        let (mut store, u) = ceb(seed, 8, 16);
        randomize(&mut store, 10 + seed, 0.5);
        let mut rng = Rng::new(20 + seed);
        let (a, b) = (random(&mut rng, &[16, 8]), random(&mut rng, &[16, 8]));
        let tape = Tape::inference(&store);
        let s = SourcePair::new(tape.constant(a.clone()), tape.constant(b.clone()), 4, 4).unwrap();
        let (x1, x2) = ceb_forward(&tape, &u, &s).unwrap();

        let w = ada(&u.attention);
        let (am, bm) = (mat(&a), mat(&b));
        let (k, v) = comp_embed(&store, w.comp.as_ref().unwrap(), &product(&am, &bm), 4, 4);
        let p = ada_aggregate(&store, w, &k, &v);
        let slot: M = am.iter().chain(bm.iter()).cloned().collect();
        let out = ada_diffuse(&store, w, &p, &slot);
        assert!(max_abs_diff(&mat(x1.value()), &out[..16].to_vec()) < 1e-10);
        assert!(max_abs_diff(&mat(x2.value()), &out[16..].to_vec()) < 1e-10);
    }
}

#[test]
fn dab_with_zero_gate_is_residual_mixer() {
    let (store, u) = dab(3, 4, 8, 16);
    let mut rng = Rng::new(4);
    let tape = Tape::inference(&store);
    let s = SourcePair::new(
        tape.constant(random(&mut rng, &[16, 4])),
        tape.constant(random(&mut rng, &[16, 4])),
        4,
        4,
    )
    .unwrap();
    let deeper = tape.constant(random(&mut rng, &[4, 8]));
    let slot = dab_slot(&tape, &u, &s, &deeper).unwrap();
    let out = dab_forward(&tape, &u, &s, &deeper).unwrap();
    let sm = mat(slot.value());
    let want = add(&sm, &ffn(&store, &ada(u.attention.as_ref().unwrap()).ffn_bw, &sm));
    assert!(max_abs_diff(&mat(out.value()), &want) < 1e-14);
}

#[test]
fn dab_matches_two_level_oracle() {
    for seed in 0..5 {
        let (mut store, u) = dab(seed, 4, 8, 16);
        randomize(&mut store, 30 + seed, 0.5);
        let mut rng = Rng::new(40 + seed);
        let (a, b, deeper) = (random(&mut rng, &[16, 4]), random(&mut rng, &[16, 4]), random(&mut rng, &[4, 8]));
        let tape = Tape::inference(&store);
        let s = SourcePair::new(tape.constant(a.clone()), tape.constant(b.clone()), 4, 4).unwrap();
        let got = dab_forward(&tape, &u, &s, &tape.constant(deeper.clone())).unwrap();

        let (am, bm) = (mat(&a), mat(&b));
        let up = upsample2x(&mat(&deeper), 2, 2);
        let mixed = concat_cols(&[&am, &bm, &up]);
        let h = linear(&store, &u.mixer.fc1, &norm(&store, &u.mixer.norm, &mixed));
        let h: M = h.iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect();
        let slot = linear(&store, &u.mixer.fc2, &h);
        let w = ada(u.attention.as_ref().unwrap());
        let (k, v) = comp_embed(&store, w.comp.as_ref().unwrap(), &abs_diff(&am, &bm), 4, 4);
        let want = ada_diffuse(&store, w, &ada_aggregate(&store, w, &k, &v), &slot);
        assert!(max_abs_diff(&mat(got.value()), &want) < 1e-10, "seed {seed}");
    }
}

#[test]
fn dab_handles_identical_streams() {
    let (mut store, u) = dab(5, 4, 8, 16);
    randomize(&mut store, 6, 0.5);
    let mut rng = Rng::new(7);
    let a = random(&mut rng, &[16, 4]);
    let tape = Tape::inference(&store);
    let s = SourcePair::new(tape.constant(a.clone()), tape.constant(a), 4, 4).unwrap();
    let out = dab_forward(&tape, &u, &s, &tape.constant(random(&mut rng, &[4, 8]))).unwrap();
    assert!(out.value().is_finite());
}

#[test]
fn dab_prototype_update_is_swap_invariant() {
    let (mut store, u) = dab(8, 4, 8, 16);
    randomize(&mut store, 9, 0.5);
    let mut rng = Rng::new(10);
    let tape = Tape::inference(&store);
    let s = SourcePair::new(
        tape.constant(random(&mut rng, &[16, 4])),
        tape.constant(random(&mut rng, &[16, 4])),
        4,
        4,
    )
    .unwrap();
    let w = ada(u.attention.as_ref().unwrap());
    let cw = w.comp.as_ref().unwrap();
    let (k1, v1) = comp_difference(&tape, cw, &s).unwrap();
    let (k2, v2) = comp_difference(&tape, cw, &s.swapped()).unwrap();
    let p1 = aggregate(&tape, w, &k1, &v1).unwrap();
    let p2 = aggregate(&tape, w, &k2, &v2).unwrap();
    assert_eq!(p1.value(), p2.value());
}

#[test]
fn ceb_passes_grad_check() {
    let (mut store, u) = ceb(11, 4, 16);
    randomize(&mut store, 12, 0.4);
    let mut rng = Rng::new(13);
    let (a, b) = (random(&mut rng, &[16, 4]), random(&mut rng, &[16, 4]));
    let (p1, p2) = (random(&mut rng, &[16, 4]), random(&mut rng, &[16, 4]));
    let ids: Vec<_> = store.ids().collect();
    let report = grad_check(
        &mut store,
        &ids,
        |t| {
            let s = SourcePair::new(t.constant(a.clone()), t.constant(b.clone()), 4, 4)?;
            let (x1, x2) = ceb_forward(t, &u, &s)?;
            let l1 = t.sum(&t.mul(&x1, &t.constant(p1.clone()))?)?;
            let l2 = t.sum(&t.mul(&x2, &t.constant(p2.clone()))?)?;
            t.add(&l1, &l2)
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.worst());
}

#[test]
fn dab_passes_grad_check() {
    let (mut store, u) = dab(14, 4, 8, 16);
    randomize(&mut store, 15, 0.4);
    let mut rng = Rng::new(16);
    let (a, b, deeper, probe) = (
        random(&mut rng, &[16, 4]),
        random(&mut rng, &[16, 4]),
        random(&mut rng, &[4, 8]),
        random(&mut rng, &[16, 4]),
    );
    let ids: Vec<_> = store.ids().collect();
    let report = grad_check(
        &mut store,
        &ids,
        |t| {
            let s = SourcePair::new(t.constant(a.clone()), t.constant(b.clone()), 4, 4)?;
            let out = dab_forward(t, &u, &s, &t.constant(deeper.clone()))?;
            t.sum(&t.mul(&out, &t.constant(probe.clone()))?)
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.worst());
}
