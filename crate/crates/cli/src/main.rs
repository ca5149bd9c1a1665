//! `laplora`: eigen precomputation, depth sweeps, spectral diagnostics and
//! synthetic data generation.

mod commands;
mod manifest;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use laplora::diagnostics::LayerChoice;
use laplora::filters::Combine;
use laplora::Variant;

#[derive(Debug, Parser)]
#[command(name = "laplora", version, about = "Laplacian-LoRA graph convolutional networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute and cache the smallest Laplacian eigenpairs.
    Eigen(EigenArgs),
    /// Train GCN and Laplacian-LoRA models over depths and seeds.
    Sweep(SweepArgs),
    /// Spectral diagnostics of a saved model.
    Diagnose(DiagnoseArgs),
    /// Write a synthetic dataset in the container format.
    Gen(GenArgs),
    /// Rerun the command recorded in a manifest.json.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct EigenArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Restart budget.
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Eigen cache; required when the variants include lora.
    #[arg(long)]
    pub eigen: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
    pub depths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "gcn,lora")]
    pub variants: Vec<Variant>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value = "sum")]
    pub combine: Combine,
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Parallel runs; LAPLORA_JOBS takes precedence.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub k: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 50)]
    pub patience: usize,
    /// Leave the output layer without the low-rank branch.
    #[arg(long)]
    pub no_output_branch: bool,
    #[arg(long)]
    pub row_normalize: bool,
    /// Also write every trained model under `<out>/models/`.
    #[arg(long)]
    pub save_models: bool,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub eigen: PathBuf,
    /// Checkpoint written by `sweep --save-models`.
    #[arg(long)]
    pub model: PathBuf,
    /// Depth at which energy retention is reported.
    #[arg(long, default_value_t = 16)]
    pub depth: usize,
    /// Contraction ratios are reported for 1..=max-depth.
    #[arg(long, default_value_t = 32)]
    pub max_depth: usize,
    #[arg(long, value_enum, default_value = "final")]
    pub layer: LayerArg,
    /// results.csv of a sweep, for the per-depth embedding variance.
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum LayerArg {
    Final,
    GeometricMean,
}

impl From<LayerArg> for LayerChoice {
    fn from(l: LayerArg) -> Self {
        match l {
            LayerArg::Final => LayerChoice::Final,
            LayerArg::GeometricMean => LayerChoice::GeometricMean,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, required_unless_present = "spec")]
    pub kind: Option<KindArg>,
    #[arg(long, required_unless_present = "spec")]
    pub n: Option<usize>,
    /// SBM block sizes; two halves when omitted.
    #[arg(long, value_delimiter = ',')]
    pub blocks: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.05)]
    pub p_out: f64,
    /// Gaussian features of this width instead of one-hot block features.
    #[arg(long)]
    pub gaussian_dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON spec file; replaces the flags above.
    #[arg(long, conflicts_with_all = ["kind", "n"])]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum KindArg {
    Path,
    Cycle,
    Complete,
    TwoCliques,
    Sbm,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Exit status for an error: 2 stale cache or convergence, 3 training
/// failure, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<laplora::Error>() {
            return match e {
                laplora::Error::StaleCache { .. } | laplora::Error::Convergence { .. } => 2,
                laplora::Error::Training(_) => 3,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Eigen(a) => commands::eigen(&a),
        Command::Sweep(a) => sweep::sweep(&a),
        Command::Diagnose(a) => commands::diagnose(&a),
        Command::Gen(a) => commands::gen(&a),
        Command::Replay(a) => manifest::replay(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
