use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pilir::config::ModelKind;
use pilir::grid::Weighting;

#[derive(Parser, Debug)]
#[command(name = "pilir", version, about = "Physics-informed PDE solving on learnable feature grids")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one model per seed and write metrics, checkpoints and snapshots.
    Train(ExperimentArgs),
    /// Train at several grid resolutions and tabulate the final errors.
    Sweep(SweepArgs),
    /// Relative L2 error of a checkpoint, plus field CSV and image.
    Eval(EvalArgs),
    /// Fourier amplitudes of a solution at fixed times.
    Spectrum(SpectrumArgs),
    /// Solve a 1-D time-dependent problem with the spectral reference solver.
    Reference(ReferenceArgs),
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: pilir::config::ConfigError| e.to_string())
}

fn parse_weighting(s: &str) -> Result<Weighting, String> {
    s.parse()
}

#[derive(Args, Debug, Clone, Default)]
pub struct ExperimentArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Problem name; replaces the config's problem section.
    #[arg(long)]
    pub problem: Option<String>,
    /// Model kind: pilir, interp_grid, mlp_pinn or wavelet_pinn.
    #[arg(long, value_parser = parse_kind)]
    pub model: Option<ModelKind>,
    #[arg(long, conflicts_with = "full_scale")]
    pub epochs: Option<usize>,
    /// Run this single seed instead of the config's seed list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grid resolution, `16` or per axis `16x8`.
    #[arg(long)]
    pub resolution: Option<String>,
    /// Output root directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = parse_weighting)]
    pub weighting: Option<Weighting>,
    /// Train for the paper's full epoch count.
    #[arg(long)]
    pub full_scale: bool,
    /// Experiment name (output subdirectory).
    #[arg(long)]
    pub experiment: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Comma-separated resolutions.
    #[arg(long, default_value = "8,12,16")]
    pub resolutions: String,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluate against this problem instead of the one in the checkpoint.
    #[arg(long)]
    pub problem: Option<String>,
    /// Check the checkpoint against the model described by this config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Evaluation grid, e.g. `256x256`.
    #[arg(long)]
    pub grid: Option<String>,
    /// Directory for the field CSV and image; defaults to the checkpoint's.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct SpectrumArgs {
    /// Model to analyse; without it only the reference solution is used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub grid: Option<String>,
    /// Comma-separated times.
    #[arg(long)]
    pub times: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ReferenceArgs {
    #[arg(long)]
    pub problem: Option<String>,
    /// Take the problem (with overrides) from a config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub modes: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}
