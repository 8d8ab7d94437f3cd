//! Scaling sweeps of single attention units in inference mode: analytic
//! operation counts, parameter counts, wall time and peak live elements.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::{flops_of, AttentionKind, AttentionUnit, CompOp, FlopQuery, Prototypes, SourcePair};
use crate::error::{Error, Result};
use crate::nn::ParamBuilder;
use crate::tensor::{alloc, kernels, ParamStore, Rng, Tape};

pub const CSV_SCHEMA: &str = "comptr-bench/1";
pub const CSV_COLUMNS: [&str; 11] = [
    "variant",
    "K",
    "L",
    "C",
    "D",
    "flops",
    "params",
    "wall_time_s",
    "peak_elements",
    "skipped",
    "skip_reason",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub token_counts: Vec<usize>,
    pub variants: Vec<AttentionKind>,
    /// Slot channels.
    pub channels: usize,
    /// Key, value and prototype channels.
    pub proto_dim: usize,
    pub ffn_expansion: usize,
    /// Use the multi-scale product front-end instead of raw source tokens.
    pub comp_ops: bool,
    pub trials: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Variants whose estimated attention buffer exceeds this many elements
    /// are skipped.
    pub memory_cap_elements: u64,
    pub parallel_matmul: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            token_counts: vec![256, 1024, 4096, 16384, 65536],
            variants: vec![
                AttentionKind::Ada(Prototypes::Fixed(4)),
                AttentionKind::Ada(Prototypes::Fixed(16)),
                AttentionKind::Ada(Prototypes::PerToken),
                AttentionKind::Standard,
            ],
            channels: 32,
            proto_dim: 32,
            ffn_expansion: 2,
            comp_ops: false,
            trials: 3,
            warmup: 1,
            seed: 0,
            memory_cap_elements: 1 << 27,
            parallel_matmul: false,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.token_counts.is_empty() || self.token_counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("token_counts must be non-empty and strictly increasing"));
        }
        if self.token_counts[0] == 0 {
            return Err(Error::invalid("token counts must be >= 1"));
        }
        if self.trials < 3 {
            return Err(Error::invalid("trials must be >= 3"));
        }
        if self.variants.is_empty() || self.channels == 0 || self.proto_dim == 0 || self.ffn_expansion == 0 {
            return Err(Error::invalid("need at least one variant and nonzero widths"));
        }
        if !self.comp_ops && self.channels != self.proto_dim {
            return Err(Error::invalid("without comp_ops the source tokens are keys, so C must equal D"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub variant: String,
    /// Prototype count; `None` for dense attention.
    pub k: Option<usize>,
    pub tokens: usize,
    pub channels: usize,
    pub proto_dim: usize,
    pub flops: u64,
    pub params: usize,
    pub wall_time_s: Option<f64>,
    pub peak_elements: Option<u64>,
    pub skip_reason: Option<String>,
}

impl BenchRow {
    pub fn skipped(&self) -> bool {
        self.skip_reason.is_some()
    }
}

/// Largest buffer of the attention itself: the `K × L` and `L' × K` maps of
/// the prototype route, or the `L' × L` map of dense attention.
pub fn attention_buffer_elements(kind: AttentionKind, tokens: usize) -> u64 {
    let l = tokens as u64;
    match kind {
        AttentionKind::Ada(p) => p.resolve(tokens) as u64 * l,
        AttentionKind::Standard => l * l,
    }
}

/// Near-square grid with `h · w = tokens`.
fn grid(tokens: usize) -> (usize, usize) {
    let mut h = (tokens as f64).sqrt() as usize;
    while h > 1 && tokens % h != 0 {
        h -= 1;
    }
    let h = h.max(1);
    (h, tokens / h)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Measures one `(variant, L)` point. `None` inside the row means skipped.
pub fn bench_point(cfg: &SweepConfig, kind: AttentionKind, tokens: usize) -> Result<BenchRow> {
    let k = match kind {
        AttentionKind::Ada(p) => Some(p.resolve(tokens)),
        AttentionKind::Standard => None,
    };
    let query = FlopQuery {
        source_tokens: tokens as u64,
        slot_tokens: tokens as u64,
        channels: cfg.channels as u64,
        proto_dim: cfg.proto_dim as u64,
        ffn_expansion: cfg.ffn_expansion as u64,
        comp_ops: cfg.comp_ops,
    };
    let mut row = BenchRow {
        variant: kind.to_string(),
        k,
        tokens,
        channels: cfg.channels,
        proto_dim: cfg.proto_dim,
        flops: flops_of(kind, &query).total(),
        params: 0,
        wall_time_s: None,
        peak_elements: None,
        skip_reason: None,
    };
    let buffer = attention_buffer_elements(kind, tokens);
    if buffer > cfg.memory_cap_elements {
        row.skip_reason = Some(format!(
            "attention buffer of {buffer} elements exceeds cap {}",
            cfg.memory_cap_elements
        ));
        return Ok(row);
    }

    let mut rng = Rng::new(cfg.seed).fork(tokens as u64);
    let mut store = ParamStore::<f32>::new();
    let op = if cfg.comp_ops { CompOp::Consistency } else { CompOp::Identity };
    let unit = {
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        match kind {
            AttentionKind::Ada(p) => {
                use crate::attention::{AdaConfig, AdaWeights};
                let ada = AdaConfig {
                    prototypes: p,
                    proto_dim: cfg.proto_dim,
                    feat_dim: cfg.channels,
                    ffn_expansion: cfg.ffn_expansion,
                    comp_op: op,
                };
                AttentionUnit::Ada(AdaWeights::new(&mut b, ada, tokens)?)
            }
            AttentionKind::Standard => {
                use crate::attention::StdAttentionWeights;
                AttentionUnit::Standard(StdAttentionWeights::new(&mut b, op, cfg.channels, cfg.proto_dim, cfg.ffn_expansion)?)
            }
        }
    };
    row.params = store.num_elements();
    let f1 = rng.normal_tensor(&[tokens, cfg.channels], 1.0)?;
    let f2 = rng.normal_tensor(&[tokens, cfg.channels], 1.0)?;
    let slot = rng.normal_tensor(&[tokens, cfg.channels], 1.0)?;
    let (h, w) = grid(tokens);

    let was_parallel = kernels::parallel_matmul();
    kernels::set_parallel_matmul(cfg.parallel_matmul);
    let run = || -> Result<(f64, u64)> {
        let tape = Tape::inference(&store);
        let s = SourcePair::new(tape.constant(f1.clone()), tape.constant(f2.clone()), h, w)?;
        let slot = tape.constant(slot.clone());
        let live = alloc::stats().current_elements;
        alloc::reset_peak();
        let start = Instant::now();
        let out = unit.forward(&tape, &s, &slot)?;
        let secs = start.elapsed().as_secs_f64();
        let peak = alloc::stats().peak_elements.saturating_sub(live);
        drop(out);
        Ok((secs, peak))
    };
    let result = (|| {
        for _ in 0..cfg.warmup {
            run()?;
        }
        let mut times = Vec::with_capacity(cfg.trials);
        let mut peak = 0;
        for _ in 0..cfg.trials {
            let (t, p) = run()?;
            times.push(t);
            peak = peak.max(p);
        }
        Ok::<_, Error>((median(times), peak))
    })();
    kernels::set_parallel_matmul(was_parallel);
    let (t, peak) = result?;
    row.wall_time_s = Some(t);
    row.peak_elements = Some(peak);
    Ok(row)
}

/// One row per `(variant, L)`, variants outermost.
pub fn run_sweep(cfg: &SweepConfig, mut on_row: impl FnMut(&BenchRow)) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &kind in &cfg.variants {
        for &l in &cfg.token_counts {
            let row = bench_point(cfg, kind, l)?;
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeMetric {
    Time,
    Flops,
    PeakElements,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub points: usize,
}

/// Least-squares slope of `ln y` against `ln x` with its standard error.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 4 {
        return Err(Error::invalid(format!("slope fit needs >= 4 points, got {}", points.len())));
    }
    if points.iter().any(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::invalid("slope fit needs positive values"));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("slope fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = logs.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(SlopeFit {
        slope,
        stderr: (ssr / (n - 2.0) / sxx).sqrt(),
        points: logs.len(),
    })
}

/// Fit over the measured rows of `variant`.
pub fn variant_slope(rows: &[BenchRow], variant: &str, metric: SlopeMetric) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.variant == variant && !r.skipped())
        .map(|r| {
            let y = match metric {
                SlopeMetric::Time => r.wall_time_s.unwrap_or(0.0),
                SlopeMetric::Flops => r.flops as f64,
                SlopeMetric::PeakElements => r.peak_elements.unwrap_or(0) as f64,
            };
            (r.tokens as f64, y)
        })
        .collect();
    fit_loglog_slope(&pts)
}

pub fn write_csv(rows: &[BenchRow], cfg: &SweepConfig, mut out: impl Write) -> Result<()> {
    writeln!(out, "# {CSV_SCHEMA} parallel_matmul={} comp_ops={}", cfg.parallel_matmul, cfg.comp_ops)
        .map_err(|e| Error::io("bench csv", e))?;
    writeln!(out, "{}", CSV_COLUMNS.join(",")).map_err(|e| Error::io("bench csv", e))?;
    for r in rows {
        let line = [
            r.variant.clone(),
            r.k.map(|k| k.to_string()).unwrap_or_default(),
            r.tokens.to_string(),
            r.channels.to_string(),
            r.proto_dim.to_string(),
            r.flops.to_string(),
            r.params.to_string(),
            r.wall_time_s.map(|t| format!("{t:e}")).unwrap_or_default(),
            r.peak_elements.map(|p| p.to_string()).unwrap_or_default(),
            r.skipped().to_string(),
            r.skip_reason.clone().unwrap_or_default().replace(',', ";"),
        ];
        writeln!(out, "{}", line.join(",")).map_err(|e| Error::io("bench csv", e))?;
    }
    Ok(())
}
