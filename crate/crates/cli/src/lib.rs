//! Command-line front end: dataset generation, training, evaluation,
//! gradient checks and attention benchmarks.

pub mod bench;
pub mod config;
pub mod eval;
pub mod gen_data;
pub mod gradcheck;
pub mod train;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "comptr", version, about = "Bi-source dense prediction with prototype attention")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (PGM images, CPT1 targets, manifest.json).
    GenData(gen_data::GenDataArgs),
    /// Train a model on a generated dataset and write a checkpoint.
    Train(train::TrainArgs),
    /// Score a checkpoint on a dataset, or score prediction/ground-truth pairs.
    Eval(eval::EvalArgs),
    /// Finite-difference gradient checks.
    Gradcheck(gradcheck::GradcheckArgs),
    /// Attention scaling sweep.
    Bench(bench::BenchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Gradcheck(_) => "gradcheck",
            Command::Bench(_) => "bench",
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data::run(a),
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Gradcheck(a) => gradcheck::run(a),
        Command::Bench(a) => bench::run(a),
    }
}

/// One-line JSON error report.
pub fn error_line(command: &str, err: &anyhow::Error) -> String {
    let message = err.chain().map(|e| e.to_string()).collect::<Vec<_>>().join(": ");
    serde_json::json!({ "command": command, "error": message }).to_string()
}

pub fn print_json(v: &serde_json::Value) {
    println!("{v}");
}
