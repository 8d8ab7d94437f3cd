//! Acceptance run: one line per criterion, written straight to stdout so it
//! shows up without `--nocapture`. Criteria run one after another in a single
//! test so the timing checks are not disturbed by other tests of this binary.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use comptr::attention::{ada_forward, AdaConfig, AdaWeights, AttentionKind, CompOp, Prototypes, SourcePair};
use comptr::bench::fit_loglog_slope;
use comptr::data::pgm;
use comptr::metrics::{binary_metrics, game, segmentation_metrics, ClassConfusion, ConfusionCounts};
use comptr::model::{ComPtrModel, ModelConfig};
use comptr::nn::ParamBuilder;
use comptr::tensor::{io, ParamStore, Rng, Tape, Tensor};
use serde_json::Value;

struct Report {
    failures: Vec<String>,
}

impl Report {
    fn line(&mut self, id: u32, title: &str, pass: bool, detail: &str) {
        let tag = if pass { "PASS" } else { "FAIL" };
        emit(&format!("[{tag}] criterion {id}: {title} ({detail})"));
        if !pass {
            self.failures.push(format!("{id}: {title}"));
        }
    }
}

fn emit(s: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{s}");
    let _ = out.flush();
}

fn comptr(args: &[&str], cwd: &Path) -> Result<Vec<Value>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_comptr"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<Value> = stdout.lines().filter_map(|l| serde_json::from_str(l).ok()).collect();
    if out.status.success() {
        Ok(lines)
    } else {
        Err(format!("{} {}", stdout.trim(), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn criterion_gradcheck(r: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let res = comptr(&["gradcheck", "--scope", "all", "--seeds", "5"], dir.path());
    let secs = start.elapsed().as_secs_f64();
    let detail = match &res {
        Ok(lines) => lines
            .iter()
            .map(|l| format!("{} {:.1e}/{:.0e}", l["scope"].as_str().unwrap_or("?"), l["max_rel_error"].as_f64().unwrap_or(f64::NAN), l["tol"].as_f64().unwrap_or(f64::NAN)))
            .collect::<Vec<_>>()
            .join(", "),
        Err(e) => e.clone(),
    };
    r.line(1, "gradient check, all scopes, 5 seeds, f64", res.is_ok() && secs < 120.0, &format!("{detail}; {secs:.1}s < 120s"));
}

fn criterion_oracle(r: &mut Report) {
    use common::*;
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        for op in [CompOp::Consistency, CompOp::Difference] {
            let cfg = AdaConfig::new(3, op).with_prototypes(Prototypes::Fixed(2));
            let mut store = ParamStore::<f64>::new();
            let mut rng = Rng::new(seed);
            let w = AdaWeights::new(&mut ParamBuilder::new(&mut store, &mut rng), cfg, 4).unwrap();
            randomize(&mut store, 1000 + seed, 0.6);
            let mut rng = Rng::new(2000 + seed);
            let f1 = rng.normal_tensor::<f64>(&[4, 3], 1.0).unwrap();
            let f2 = rng.normal_tensor::<f64>(&[4, 3], 1.0).unwrap();
            let slot = rng.normal_tensor::<f64>(&[4, 3], 1.0).unwrap();
            let tape = Tape::inference(&store);
            let s = SourcePair::new(tape.constant(f1.clone()), tape.constant(f2.clone()), 2, 2).unwrap();
            let got = ada_forward(&tape, &w, &s, &tape.constant(slot.clone())).unwrap();
            let base = match op {
                CompOp::Consistency => product(&mat(&f1), &mat(&f2)),
                _ => abs_diff(&mat(&f1), &mat(&f2)),
            };
            let (k, v) = comp_embed(&store, w.comp.as_ref().unwrap(), &base, 2, 2);
            let want = ada_diffuse(&store, &w, &ada_aggregate(&store, &w, &k, &v), &mat(&slot));
            worst = worst.max(max_abs_diff(&mat(got.value()), &want));
        }
    }
    r.line(2, "ADA forward vs straight-line oracle, L=4 K=2 C=D=3, 20 seeds", worst < 1e-10, &format!("max |diff| {worst:.2e} < 1e-10"));
}

fn criterion_zero_gate(r: &mut Report) {
    let img = |seed| Rng::new(seed).uniform_tensor::<f32>(&[64, 64, 1], 0.0, 1.0).unwrap();
    let (a, b) = (img(1), img(2));
    let mut all = true;
    let mut banks = 0;
    for k in [Prototypes::Fixed(4), Prototypes::Fixed(1), Prototypes::PerToken] {
        let m = ComPtrModel::<f32>::new(
            ModelConfig {
                attention: AttentionKind::Ada(k),
                ..Default::default()
            },
            0,
        )
        .unwrap();
        let before = m.predict(&a, &b).unwrap();
        let mut other = m.clone();
        let mut rng = Rng::new(99);
        for id in other.prototype_banks() {
            let shape = other.params.value(id).shape().to_vec();
            other.params.set_value(id, rng.normal_tensor(&shape, 1.0).unwrap()).unwrap();
            banks += 1;
        }
        let after = other.predict(&a, &b).unwrap();
        all &= before.data().iter().zip(after.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    }
    r.line(3, "zero-gamma model output bit-identical under re-randomised prototype banks", all, &format!("{banks} banks, K in {{4, 1, inf}}"));
}

fn criterion_scaling(r: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let sweep = serde_json::json!({
        "token_counts": [256, 512, 1024, 2048, 4096, 8192, 16384, 65536],
        "variants": [{"ada": {"fixed": 4}}, {"ada": "per_token"}, "standard"],
        "channels": 32,
        "proto_dim": 32,
        "trials": 3,
        "warmup": 1,
        "memory_cap_elements": 1u64 << 26,
    });
    std::fs::write(dir.path().join("sweep.json"), sweep.to_string()).unwrap();
    let start = Instant::now();
    if let Err(e) = comptr(&["bench", "--sweep", "sweep.json", "--out", "bench.csv"], dir.path()) {
        r.line(4, "linear vs quadratic scaling", false, &e);
        return;
    }
    let secs = start.elapsed().as_secs_f64();
    let text = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let body: String = text.lines().skip(1).collect::<Vec<_>>().join("\n");
    let mut rd = csv::Reader::from_reader(body.as_bytes());
    let rows: Vec<csv::StringRecord> = rd.records().map(|x| x.unwrap()).collect();
    let points = |variant: &str, col: usize| -> Vec<(f64, f64)> {
        rows.iter()
            .filter(|x| &x[0] == variant && &x[9] == "false")
            .map(|x| (x[2].parse().unwrap(), x[col].parse().unwrap()))
            .collect()
    };
    let slope = |variant: &str, col: usize| fit_loglog_slope(&points(variant, col)).map(|f| f.slope).unwrap_or(f64::NAN);
    let (ada_t, std_t) = (slope("ada-k4", 7), slope("std", 7));
    let (ada_m, std_m) = (slope("ada-k4", 8), slope("std", 8));
    let status = |variant: &str, l: &str| rows.iter().find(|x| &x[0] == variant && &x[2] == l).map(|x| x[9].to_string());
    let big_ok = status("ada-k4", "65536").as_deref() == Some("false")
        && status("std", "65536").as_deref() == Some("true")
        && status("ada-kinf", "65536").as_deref() == Some("true");
    let pass = (0.8..=1.3).contains(&ada_t)
        && (1.6..=2.3).contains(&std_t)
        && ada_m <= 1.2
        && std_m >= 1.7
        && big_ok
        && secs < 300.0;
    r.line(
        4,
        "linear vs quadratic scaling",
        pass,
        &format!(
            "time slope ada-k4 {ada_t:.3} in [0.8,1.3], std {std_t:.3} in [1.6,2.3]; peak slope ada-k4 {ada_m:.3} <= 1.2, std {std_m:.3} >= 1.7; L=65536 ada-k4 ran, std/ada-kinf skipped: {big_ok}; {secs:.0}s < 300s"
        ),
    );
}

fn criterion_metrics(r: &mut Report) {
    let mut rng = Rng::new(5);
    let mut ok_binary = true;
    let mut ok_seg = true;
    for _ in 0..200 {
        let p1 = rng.range(0.1, 0.9);
        let pred: Vec<f32> = (0..256).map(|_| rng.bernoulli(p1) as u8 as f32).collect();
        let gt: Vec<f32> = (0..256).map(|_| rng.bernoulli(0.35) as u8 as f32).collect();
        let (mut tp, mut tn, mut fp, mut fnn) = (0u32, 0u32, 0u32, 0u32);
        for i in 0..256 {
            match (pred[i] == 1.0, gt[i] == 1.0) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (true, false) => fp += 1,
                (false, true) => fnn += 1,
            }
        }
        let q = |a: u32, b: u32| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (m, _) = binary_metrics(&ConfusionCounts::from_maps(&pred, &gt).unwrap());
        ok_binary &= m.precision == q(tp, tp + fp)
            && m.recall == q(tp, tp + fnn)
            && m.f1 == q(2 * tp, 2 * tp + fnn + fp)
            && m.iou == q(tp, tp + fp + fnn)
            && m.oa == q(tp + tn, 256);

        let n = 2 + rng.below(4);
        let g: Vec<usize> = (0..256).map(|_| rng.below(n)).collect();
        let p: Vec<usize> = g.iter().map(|&c| if rng.bernoulli(0.5) { c } else { rng.below(n) }).collect();
        let mut cc = ClassConfusion::new(n);
        cc.add_maps(&p, &g).unwrap();
        let s = segmentation_metrics(&cc);
        let correct = (0..256).filter(|&i| p[i] == g[i]).count();
        let (mut acc, mut accn, mut iou, mut ioun) = (0.0, 0, 0.0, 0);
        for c in 0..n {
            let inter = (0..256).filter(|&i| p[i] == c && g[i] == c).count();
            let gt_c = (0..256).filter(|&i| g[i] == c).count();
            let uni = (0..256).filter(|&i| p[i] == c || g[i] == c).count();
            if gt_c > 0 {
                acc += inter as f64 / gt_c as f64;
                accn += 1;
            }
            if uni > 0 {
                iou += inter as f64 / uni as f64;
                ioun += 1;
            }
        }
        ok_seg &= s.pixel_acc == correct as f64 / 256.0
            && (s.mean_acc - acc / accn as f64).abs() < 1e-15
            && (s.mean_iou - iou / ioun as f64).abs() < 1e-15;
    }

    let mut ok_game = true;
    let mut monotone = true;
    for _ in 0..100 {
        let d = |rng: &mut Rng| -> Vec<f32> { (0..256).map(|_| if rng.bernoulli(0.25) { rng.range(0.0, 2.0) as f32 } else { 0.0 }).collect() };
        let (p, g) = (d(&mut rng), d(&mut rng));
        let mut prev = -1.0;
        for level in 0..4u32 {
            let cells = 1usize << level;
            let mut diff = vec![0.0f64; cells * cells];
            for y in 0..16 {
                for x in 0..16 {
                    diff[(y * cells / 16) * cells + x * cells / 16] += p[y * 16 + x] as f64 - g[y * 16 + x] as f64;
                }
            }
            let brute: f64 = diff.iter().map(|v| v.abs()).sum();
            let got = game(&[(&p, &g)], 16, 16, level).unwrap();
            ok_game &= (got - brute).abs() < 1e-9;
            monotone &= got >= prev - 1e-9;
            prev = got;
        }
    }
    let (hand, _) = binary_metrics(&ConfusionCounts { tp: 3, fp: 1, fn_: 1, tn: 5 });
    let hand_ok = hand.f1 == 0.75 && hand.iou == 0.6;
    r.line(
        5,
        "metric oracles",
        ok_binary && ok_seg && ok_game && monotone && hand_ok,
        &format!("binary exact on 200 maps {ok_binary}, segmentation {ok_seg}, GAME brute force {ok_game}, GAME monotone on 100 pairs {monotone}, hand case F1 {} IOU {}", hand.f1, hand.iou),
    );
}

fn train_and_eval(dir: &Path, data: &str, test: &str, out: &str, extra: &[&str]) -> Result<f64, String> {
    let mut args = vec!["train", "--data", data, "--out", out];
    args.extend_from_slice(extra);
    comptr(&args, dir)?;
    let csv = format!("{out}.csv");
    let v = comptr(&["eval", "--ckpt", out, "--data", test, "--out", &csv], dir)?;
    v.first().and_then(|l| l["aggregate"]["f1"].as_f64()).ok_or_else(|| "no f1 in eval output".into())
}

fn criterion_toy(r: &mut Report, dir: &Path) {
    let start = Instant::now();
    let res = (|| {
        comptr(&["gen-data", "--task", "change", "--out", "train512", "--count", "512", "--size", "64", "--seed", "1"], dir)?;
        comptr(&["gen-data", "--task", "change", "--out", "test128", "--count", "128", "--size", "64", "--seed", "2"], dir)?;
        train_and_eval(dir, "train512", "test128", "toy", &["--epochs", "20", "--k", "4", "--base-channels", "16", "--seed", "0"])
    })();
    let secs = start.elapsed();
    match res {
        Ok(f1) => r.line(
            6,
            "toy change detection 64x64, 512/128 pairs, C=16, K=4, 20 epochs",
            f1 >= 0.80 && secs < Duration::from_secs(15 * 60),
            &format!("test F1 {f1:.4} >= 0.80; {:.0}s < 900s", secs.as_secs_f64()),
        ),
        Err(e) => r.line(6, "toy change detection", false, &e),
    }
}

fn criterion_ablation(r: &mut Report, dir: &Path) {
    let res = (|| {
        comptr(&["gen-data", "--task", "change", "--out", "train256", "--count", "256", "--size", "64", "--seed", "1"], dir)?;
        let mut means = Vec::new();
        for (name, ablate) in [("full", None), ("-DAB", Some("dab")), ("-Both", Some("ceb,dab"))] {
            let mut f1s = Vec::new();
            for seed in ["0", "1", "2"] {
                let mut extra = vec!["--epochs", "10", "--seed", seed];
                if let Some(a) = ablate {
                    extra.extend(["--ablate", a]);
                }
                let out = format!("abl{}_{seed}", name.trim_start_matches('-'));
                f1s.push(train_and_eval(dir, "train256", "test128", &out, &extra)?);
            }
            means.push((name, f1s.iter().sum::<f64>() / 3.0));
        }
        Ok::<_, String>(means)
    })();
    match res {
        Ok(m) => {
            let holds = m[0].1 >= m[1].1 && m[0].1 >= m[2].1;
            let detail = m.iter().map(|(n, f)| format!("{n} {f:.4}")).collect::<Vec<_>>().join(", ");
            // soft criterion: a violation is reported, not failed
            let tag = if holds { "PASS" } else { "WARN" };
            emit(&format!("[{tag}] criterion 7: ablation direction, mean test F1 over 3 seeds, 256 train pairs, 10 epochs ({detail}; full >= -DAB and full >= -Both: {holds})"));
        }
        Err(e) => r.line(7, "ablation runs", false, &e),
    }
}

fn criterion_k_sweep(r: &mut Report, dir: &Path) {
    let res = (|| {
        comptr(&["gen-data", "--out", "ksweep", "--count", "16", "--size", "32", "--seed", "3"], dir)?;
        let mut done = Vec::new();
        for k in ["1", "2", "4", "8", "16", "inf", "std"] {
            let out = format!("k_{k}");
            train_and_eval(dir, "ksweep", "ksweep", &out, &["--epochs", "1", "--k", k])?;
            done.push(k);
        }
        Ok::<_, String>(done)
    })();
    match res {
        Ok(ks) => r.line(8, "train/eval for every prototype setting", true, &format!("K = {} all ran", ks.join(", "))),
        Err(e) => r.line(8, "train/eval for every prototype setting", false, &e),
    }
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_determinism(r: &mut Report, dir: &Path) {
    let res = (|| {
        comptr(&["gen-data", "--out", "det", "--count", "8", "--size", "32", "--seed", "4"], dir)?;
        for run in ["a", "b"] {
            let out = format!("det_{run}");
            comptr(&["train", "--data", "det", "--out", &out, "--epochs", "2", "--base-channels", "8", "--seed", "6"], dir)?;
            comptr(&["eval", "--ckpt", &out, "--data", "det", "--out", &format!("{out}.csv")], dir)?;
        }
        Ok::<_, String>(())
    })();
    if let Err(e) = res {
        r.line(9, "determinism and formats", false, &e);
        return;
    }
    let strip = |files: Vec<(String, Vec<u8>)>| files.into_iter().filter(|(n, _)| n != "loss_log.csv").collect::<Vec<_>>();
    let ckpt_same = strip(tree(&dir.join("det_a"))) == strip(tree(&dir.join("det_b")));
    let csv_same = std::fs::read(dir.join("det_a.csv")).unwrap() == std::fs::read(dir.join("det_b.csv")).unwrap();

    let mut rng = Rng::new(12);
    let mut cpt_ok = true;
    for shape in [vec![7], vec![3, 5], vec![2, 3, 4]] {
        let mut t32 = rng.normal_tensor::<f32>(&shape, 10.0).unwrap();
        if let Some(v) = t32.data_mut().first_mut() {
            *v = f32::MIN_POSITIVE / 3.0;
        }
        let t64 = rng.normal_tensor::<f64>(&shape, 1e6).unwrap();
        let b32: Tensor<f32> = io::decode(&io::encode(&t32)).unwrap();
        let b64: Tensor<f64> = io::decode(&io::encode(&t64)).unwrap();
        cpt_ok &= b32.shape() == t32.shape() && b32.data().iter().zip(t32.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        cpt_ok &= b64.shape() == t64.shape() && b64.data().iter().zip(t64.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    let img = Tensor::from_fn(&[13, 9], |_| rng.below(256) as f32 / 255.0).unwrap();
    let back = pgm::decode(&pgm::encode(&img).unwrap()).unwrap();
    let pgm_ok = back.shape() == img.shape() && back.data().iter().zip(img.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    r.line(
        9,
        "determinism and formats",
        ckpt_same && csv_same && cpt_ok && pgm_ok,
        &format!("same-seed checkpoints identical {ckpt_same}, metric CSVs identical {csv_same}, CPT1 bit-exact {cpt_ok}, PGM bit-exact {pgm_ok}"),
    );
}

#[test]
fn acceptance() {
    let mut r = Report { failures: Vec::new() };
    let work = tempfile::tempdir().unwrap();
    emit("acceptance criteria:");
    criterion_gradcheck(&mut r);
    criterion_oracle(&mut r);
    criterion_zero_gate(&mut r);
    criterion_scaling(&mut r);
    criterion_metrics(&mut r);
    criterion_toy(&mut r, work.path());
    criterion_ablation(&mut r, work.path());
    criterion_k_sweep(&mut r, work.path());
    criterion_determinism(&mut r, work.path());
    assert!(r.failures.is_empty(), "failed criteria: {:?}", r.failures);
}
