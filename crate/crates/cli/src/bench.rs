use std::fs::File;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use comptr::bench::{run_sweep, variant_slope, write_csv, SlopeMetric, SweepConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    /// Sweep configuration JSON; missing fields take their defaults.
    #[arg(long)]
    pub sweep: Option<PathBuf>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the sweep seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(a: BenchArgs) -> anyhow::Result<()> {
    let mut cfg: SweepConfig = match &a.sweep {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SweepConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let rows = run_sweep(&cfg, |r| match (&r.wall_time_s, &r.skip_reason) {
        (Some(t), _) => eprintln!("{} L={} {:.3e}s peak={}", r.variant, r.tokens, t, r.peak_elements.unwrap_or(0)),
        (_, Some(why)) => eprintln!("{} L={} skipped: {why}", r.variant, r.tokens),
        _ => {}
    })?;
    let file = File::create(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    write_csv(&rows, &cfg, file)?;
    for kind in &cfg.variants {
        let v = kind.to_string();
        for (metric, name) in [
            (SlopeMetric::Time, "time"),
            (SlopeMetric::Flops, "flops"),
            (SlopeMetric::PeakElements, "peak_elements"),
        ] {
            let line = match variant_slope(&rows, &v, metric) {
                Ok(f) => serde_json::json!({"variant": v, "metric": name, "slope": f.slope, "stderr": f.stderr, "points": f.points}),
                Err(e) => serde_json::json!({"variant": v, "metric": name, "slope": null, "reason": e.to_string()}),
            };
            crate::print_json(&line);
        }
    }
    Ok(())
}
