use std::path::PathBuf;

use anyhow::bail;
use clap::Args;
use comptr::grad_suite::{run_scope, GradScope, DEFAULT_SEEDS};
use serde::{Deserialize, Serialize};

use crate::config;

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckArgs {
    /// op | ada | ceb | dab | model | all (comma separated) [default: all].
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub scope: Vec<String>,
    /// Relative-error tolerance for every scope [default: 1e-4, 1e-3 for model].
    #[arg(long)]
    pub tol: Option<f64>,
    /// Seeds per check [default: 5].
    #[arg(long)]
    pub seeds: Option<u64>,
    /// JSON file with any of these options; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

pub fn scopes(names: &[String]) -> anyhow::Result<Vec<GradScope>> {
    if names.is_empty() || names.iter().any(|n| n == "all") {
        return Ok(GradScope::ALL.to_vec());
    }
    let mut out: Vec<GradScope> = names.iter().map(|n| n.parse()).collect::<Result<_, _>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

pub fn run(args: GradcheckArgs) -> anyhow::Result<()> {
    let a = config::merge(&args, args.config.as_deref())?;
    let mut failed = Vec::new();
    for scope in scopes(&a.scope)? {
        let r = run_scope(scope, a.tol, a.seeds.unwrap_or(DEFAULT_SEEDS))?;
        let worst = r.worst();
        let elem = worst.and_then(|c| c.worst.as_ref());
        crate::print_json(&serde_json::json!({
            "scope": scope.to_string(),
            "passed": r.passed(),
            "tol": r.tol,
            "max_rel_error": r.max_rel_error(),
            "checks": r.cases.iter().map(|c| c.checked).sum::<usize>(),
            "worst_case": worst.map(|c| &c.name),
            "worst_seed": worst.map(|c| c.seed),
            "worst_param": elem.map(|e| &e.param),
            "worst_index": elem.map(|e| &e.index),
            "analytic": elem.map(|e| e.analytic),
            "numeric": elem.map(|e| e.numeric),
        }));
        if !r.passed() {
            failed.push(scope.to_string());
        }
    }
    if !failed.is_empty() {
        bail!("gradient check failed for scope(s) {}", failed.join(", "));
    }
    Ok(())
}
