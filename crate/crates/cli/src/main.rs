//! `embodied`: command-line front end for the dynamics checks, tracking,
//! endpoint selection, pipeline simulation and approximation sweeps.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "embodied", version, about = "Robot back-end reproduction toolkit")]
pub struct Cli {
    /// Seed for every random choice a subcommand makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving all outputs.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// JSON file with subcommand options; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare the dynamics kernels against independent references.
    DynamicsCheck(DynamicsCheckArgs),
    /// Track a trajectory with the task-space controller.
    Track(TrackArgs),
    /// Select the adaptive trajectory endpoint.
    Adapt(AdaptArgs),
    /// Simulate an execution pipeline.
    Pipeline(PipelineArgs),
    /// Sweep the approximate-update threshold over a trajectory corpus.
    ApproxSweep(ApproxSweepArgs),
}

#[derive(Debug, Args)]
pub struct DynamicsCheckArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Number of random configurations.
    #[arg(long)]
    pub configs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub traj: PathBuf,
    /// Control rate, Hz.
    #[arg(long)]
    pub hz: Option<f64>,
    /// Uniform proportional gain.
    #[arg(long)]
    pub kp: Option<f64>,
    /// Uniform derivative gain.
    #[arg(long)]
    pub kv: Option<f64>,
    /// Comma-separated task coordinates, e.g. `x,y`.
    #[arg(long, value_delimiter = ',')]
    pub task_dims: Option<Vec<String>>,
    /// Initial end-effector displacement along x, meters.
    #[arg(long)]
    pub start_offset: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[arg(long)]
    pub traj: PathBuf,
    /// Treat rows as the start point followed by waypoints instead of fitting.
    #[arg(long)]
    pub waypoints: bool,
    /// Distance threshold, meters.
    #[arg(long)]
    pub d: Option<f64>,
    /// Waypoint spacing, seconds.
    #[arg(long)]
    pub step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// `baseline`, `corki:N` or `adaptive`.
    #[arg(long)]
    pub schedule: Option<String>,
    /// Total number of steps.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ApproxSweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Trajectory CSV files or directories of them.
    #[arg(long, required = true)]
    pub traj: Vec<PathBuf>,
    /// Thresholds to evaluate.
    #[arg(long, num_args = 1..)]
    pub threshold: Option<Vec<f64>>,
    #[arg(long)]
    pub hz: Option<f64>,
    /// Initial end-effector displacement along x, meters.
    #[arg(long)]
    pub start_offset: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub task_dims: Option<Vec<String>>,
}

/// Exit status classes.
#[derive(Debug)]
pub enum Failure {
    /// A check ran and failed.
    Check(anyhow::Error),
    /// Bad arguments, configuration or input files.
    Usage(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Usage(_) => 2,
        }
    }
}

pub fn usage<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Usage(e.into())
}

pub fn check<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Check(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let (Failure::Check(e) | Failure::Usage(e)) = &failure;
            eprintln!("error: {e:#}");
            ExitCode::from(failure.code())
        }
    }
}
