//! Finite-difference checks of every tape op, the attention units, both
//! blocks and a reduced full model, in double precision.

use std::fmt;
use std::str::FromStr;

use crate::attention::{AttentionKind, AttentionUnit, CompOp, Prototypes, SourcePair};
use crate::blocks::{ceb_forward, dab_forward, CebUnit, DabUnit};
use crate::error::{Error, Result};
use crate::model::{ComPtrModel, ModelConfig, SamplePair};
use crate::nn::ParamBuilder;
use crate::tensor::{grad_check, ElementCheck, GradCheckConfig, ParamStore, Rng, Tape, Tensor, Var};

pub const DEFAULT_SEEDS: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum GradScope {
    Op,
    Ada,
    Ceb,
    Dab,
    Model,
}

impl GradScope {
    pub const ALL: [GradScope; 5] = [GradScope::Op, GradScope::Ada, GradScope::Ceb, GradScope::Dab, GradScope::Model];

    /// Composite depth makes the full model noisier.
    pub fn default_tol(self) -> f64 {
        match self {
            GradScope::Model => 1e-3,
            _ => 1e-4,
        }
    }
}

impl fmt::Display for GradScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradScope::Op => "op",
            GradScope::Ada => "ada",
            GradScope::Ceb => "ceb",
            GradScope::Dab => "dab",
            GradScope::Model => "model",
        })
    }
}

impl FromStr for GradScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GradScope::ALL
            .into_iter()
            .find(|g| g.to_string() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown scope {s:?} (expected op, ada, ceb, dab or model)")))
    }
}

#[derive(Debug, Clone)]
pub struct CaseReport {
    pub name: String,
    pub seed: u64,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<ElementCheck>,
}

#[derive(Debug, Clone)]
pub struct ScopeReport {
    pub scope: GradScope,
    pub tol: f64,
    pub cases: Vec<CaseReport>,
}

impl ScopeReport {
    pub fn worst(&self) -> Option<&CaseReport> {
        self.cases.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.worst().map_or(0.0, |c| c.max_rel_error)
    }

    pub fn passed(&self) -> bool {
        !self.cases.is_empty() && self.cases.iter().all(|c| c.max_rel_error < self.tol)
    }
}

fn randomize(store: &mut ParamStore<f64>, rng: &mut Rng, std: f64) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let shape = store.value(id).shape().to_vec();
        store.set_value(id, rng.normal_tensor(&shape, std)?)?;
    }
    Ok(())
}

/// `Σ out ⊙ probe` with a fixed random probe, so every output element matters.
fn probe_loss(tape: &Tape<'_, f64>, out: &Var<f64>, probe: &Tensor<f64>) -> Result<Var<f64>> {
    tape.sum(&tape.mul(out, &tape.constant(probe.clone()))?)
}

fn run_case<F>(
    name: &str,
    seed: u64,
    store: &mut ParamStore<f64>,
    cfg: &GradCheckConfig,
    f: F,
) -> Result<CaseReport>
where
    F: Fn(&Tape<f64>) -> Result<Var<f64>>,
{
    let ids: Vec<_> = store.ids().collect();
    let report = grad_check(store, &ids, f, cfg)?;
    Ok(CaseReport {
        name: name.to_string(),
        seed,
        checked: report.elements.len(),
        max_rel_error: report.max_rel_error(),
        worst: report.worst().cloned(),
    })
}

type OpFn = fn(&Tape<'_, f64>, &[Var<f64>], &mut Rng) -> Result<Var<f64>>;

/// Name, input shapes, forward.
fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 5]], |t, x, _| t.matmul(&x[0], &x[1])),
        ("matmul_nt", vec![vec![3, 4], vec![5, 4]], |t, x, _| t.matmul_nt(&x[0], &x[1])),
        ("add", vec![vec![3, 4], vec![3, 4]], |t, x, _| t.add(&x[0], &x[1])),
        ("sub", vec![vec![3, 4], vec![3, 4]], |t, x, _| t.sub(&x[0], &x[1])),
        ("mul", vec![vec![3, 4], vec![3, 4]], |t, x, _| t.mul(&x[0], &x[1])),
        ("absdiff", vec![vec![3, 4], vec![3, 4]], |t, x, _| t.absdiff(&x[0], &x[1])),
        ("add_row", vec![vec![3, 4], vec![4]], |t, x, _| t.add_row(&x[0], &x[1])),
        ("mul_row", vec![vec![3, 4], vec![4]], |t, x, _| t.mul_row(&x[0], &x[1])),
        ("scale", vec![vec![3, 4]], |t, x, _| t.scale(&x[0], -0.7)),
        ("softmax_rows", vec![vec![3, 5]], |t, x, _| t.softmax_rows(&x[0])),
        ("cosine_rows", vec![vec![3, 4], vec![5, 4]], |t, x, _| t.cosine_rows(&x[0], &x[1])),
        ("layer_norm", vec![vec![3, 6], vec![6], vec![6]], |t, x, _| t.layer_norm(&x[0], &x[1], &x[2])),
        ("gelu", vec![vec![3, 4]], |t, x, _| t.gelu(&x[0])),
        ("relu", vec![vec![3, 4]], |t, x, _| t.relu(&x[0])),
        ("abs", vec![vec![3, 4]], |t, x, _| t.abs(&x[0])),
        ("avg_pool_3", vec![vec![5, 4, 3]], |t, x, _| t.avg_pool_2d(&x[0], 3)),
        ("avg_pool_5", vec![vec![5, 4, 3]], |t, x, _| t.avg_pool_2d(&x[0], 5)),
        ("bilinear_upsample_2x", vec![vec![3, 4, 2]], |t, x, _| t.bilinear_upsample_2x(&x[0])),
        ("space_to_depth", vec![vec![4, 6, 2]], |t, x, _| t.space_to_depth(&x[0], 2)),
        ("reshape", vec![vec![3, 4]], |t, x, _| t.reshape(&x[0], &[2, 6])),
        ("concat_cols", vec![vec![3, 2], vec![3, 4]], |t, x, _| t.concat_cols(&[&x[0], &x[1]])),
        ("concat_rows", vec![vec![2, 3], vec![4, 3]], |t, x, _| t.concat_rows(&[&x[0], &x[1]])),
        ("slice_rows", vec![vec![5, 3]], |t, x, _| t.slice_rows(&x[0], 1, 3)),
        ("slice_cols", vec![vec![3, 5]], |t, x, _| t.slice_cols(&x[0], 2, 2)),
        ("sum", vec![vec![3, 4]], |t, x, _| t.sum(&x[0])),
        ("mean", vec![vec![3, 4]], |t, x, _| t.mean(&x[0])),
        ("bce_with_logits", vec![vec![6, 1]], |t, x, rng| {
            let target = rng.uniform_tensor(&[6, 1], 0.0, 1.0)?;
            t.bce_with_logits(&x[0], &target)
        }),
        ("cross_entropy", vec![vec![5, 3]], |t, x, rng| {
            let labels: Vec<usize> = (0..5).map(|_| rng.below(3)).collect();
            t.cross_entropy(&x[0], &labels)
        }),
    ]
}

fn op_scope(seeds: u64, cfg: &GradCheckConfig) -> Result<Vec<CaseReport>> {
    let mut out = Vec::new();
    for (name, shapes, f) in op_cases() {
        for seed in 0..seeds {
            let mut rng = Rng::new(seed).fork(name.len() as u64 * 131 + shapes.len() as u64);
            let mut store = ParamStore::<f64>::new();
            let ids: Vec<_> = shapes
                .iter()
                .enumerate()
                .map(|(i, s)| Ok(store.add(format!("{name}.in{i}"), rng.normal_tensor(s, 1.0)?)))
                .collect::<Result<_>>()?;
            // probe shape comes from one forward pass
            let side_seed = rng.fork(7);
            let shape = {
                let tape = Tape::inference(&store);
                let xs: Vec<_> = ids.iter().map(|&id| tape.param(id)).collect();
                f(&tape, &xs, &mut side_seed.clone())?.shape().to_vec()
            };
            let probe = rng.normal_tensor(&shape, 1.0)?;
            out.push(run_case(name, seed, &mut store, cfg, |tape| {
                let xs: Vec<_> = ids.iter().map(|&id| tape.param(id)).collect();
                let y = f(tape, &xs, &mut side_seed.clone())?;
                probe_loss(tape, &y, &probe)
            })?);
        }
    }
    Ok(out)
}

fn source_pair<'t>(tape: &Tape<'t, f64>, f1: &Tensor<f64>, f2: &Tensor<f64>, h: usize, w: usize) -> Result<SourcePair<f64>> {
    SourcePair::new(tape.constant(f1.clone()), tape.constant(f2.clone()), h, w)
}

const UNIT_KINDS: [AttentionKind; 3] = [
    AttentionKind::Ada(Prototypes::Fixed(1)),
    AttentionKind::Ada(Prototypes::Fixed(4)),
    AttentionKind::Standard,
];

fn unit_scope(scope: GradScope, seeds: u64, cfg: &GradCheckConfig) -> Result<Vec<CaseReport>> {
    let (h, w, dim) = (4, 4, 6);
    let l = h * w;
    let mut out = Vec::new();
    for kind in UNIT_KINDS {
        if scope == GradScope::Ada && kind == AttentionKind::Standard {
            continue;
        }
        for seed in 0..seeds {
            let mut rng = Rng::new(seed).fork(scope as u64 * 10 + UNIT_KINDS.iter().position(|k| *k == kind).unwrap() as u64);
            let mut store = ParamStore::<f64>::new();
            let f1 = rng.normal_tensor(&[l, dim], 1.0)?;
            let f2 = rng.normal_tensor(&[l, dim], 1.0)?;
            let name = format!("{scope}-{kind}");
            let report = match scope {
                GradScope::Ada => {
                    let unit = AttentionUnit::new(&mut ParamBuilder::new(&mut store, &mut rng), kind, CompOp::Consistency, dim, 2, l)?;
                    randomize(&mut store, &mut rng, 0.4)?;
                    let slot = rng.normal_tensor(&[l, dim], 1.0)?;
                    let probe = rng.normal_tensor(&[l, dim], 1.0)?;
                    run_case(&name, seed, &mut store, cfg, |tape| {
                        let s = source_pair(tape, &f1, &f2, h, w)?;
                        probe_loss(tape, &unit.forward(tape, &s, &tape.constant(slot.clone()))?, &probe)
                    })?
                }
                GradScope::Ceb => {
                    let unit = CebUnit::new(&mut ParamBuilder::new(&mut store, &mut rng), kind, dim, 2, l, true)?;
                    randomize(&mut store, &mut rng, 0.4)?;
                    let (p1, p2) = (rng.normal_tensor(&[l, dim], 1.0)?, rng.normal_tensor(&[l, dim], 1.0)?);
                    run_case(&name, seed, &mut store, cfg, |tape| {
                        let (a, b) = ceb_forward(tape, &unit, &source_pair(tape, &f1, &f2, h, w)?)?;
                        tape.add(&probe_loss(tape, &a, &p1)?, &probe_loss(tape, &b, &p2)?)
                    })?
                }
                _ => {
                    let deeper_dim = 2 * dim;
                    let unit = DabUnit::new(&mut ParamBuilder::new(&mut store, &mut rng), kind, dim, deeper_dim, 2, l, true, true)?;
                    randomize(&mut store, &mut rng, 0.4)?;
                    let deeper = rng.normal_tensor(&[l / 4, deeper_dim], 1.0)?;
                    let probe = rng.normal_tensor(&[l, dim], 1.0)?;
                    run_case(&name, seed, &mut store, cfg, |tape| {
                        let s = source_pair(tape, &f1, &f2, h, w)?;
                        probe_loss(tape, &dab_forward(tape, &unit, &s, &tape.constant(deeper.clone()))?, &probe)
                    })?
                }
            };
            out.push(report);
        }
    }
    Ok(out)
}

const MODEL_STEP: f64 = 3e-5;

/// Reduced model: 32×32 input, 8 base channels, binary loss, a random subset
/// of elements per parameter.
fn model_scope(seeds: u64, cfg: &GradCheckConfig) -> Result<Vec<CaseReport>> {
    let mut out = Vec::new();
    for seed in 0..seeds {
        let config = ModelConfig {
            height: 32,
            width: 32,
            base_channels: 8,
            ..Default::default()
        };
        let mut model = ComPtrModel::<f64>::new(config, seed)?;
        let mut rng = Rng::new(seed).fork(99);
        randomize(&mut model.params, &mut rng, 0.3)?;
        let img1 = rng.uniform_tensor::<f32>(&[32, 32, 1], 0.0, 1.0)?;
        let img2 = rng.uniform_tensor::<f32>(&[32, 32, 1], 0.0, 1.0)?;
        let mask = Tensor::from_fn(&[32, 32], |_| if rng.bernoulli(0.3) { 1.0f32 } else { 0.0 })?;
        let sample = SamplePair::new(img1, img2, mask)?;
        let mut store = model.params.clone();
        // smaller step: the full model has sharply curved elements where
        // h = 1e-4 leaves ~1e-3 truncation error; rounding takes over below 1e-5
        let cfg = GradCheckConfig {
            step: MODEL_STEP,
            max_elements_per_param: Some(cfg.max_elements_per_param.unwrap_or(2)),
            seed,
            ..cfg.clone()
        };
        out.push(run_case("model", seed, &mut store, &cfg, |tape| model.sample_loss(tape, &sample))?);
    }
    Ok(out)
}

/// Runs one scope over `seeds` seeds. `tol = None` uses the scope default.
pub fn run_scope(scope: GradScope, tol: Option<f64>, seeds: u64) -> Result<ScopeReport> {
    let tol = tol.unwrap_or(scope.default_tol());
    if !(tol >= 0.0) {
        return Err(Error::invalid("tolerance must be >= 0"));
    }
    let cfg = GradCheckConfig {
        tol,
        ..Default::default()
    };
    let cases = match scope {
        GradScope::Op => op_scope(seeds, &cfg)?,
        GradScope::Model => model_scope(seeds, &cfg)?,
        _ => unit_scope(scope, seeds, &cfg)?,
    };
    Ok(ScopeReport { scope, tol, cases })
}
