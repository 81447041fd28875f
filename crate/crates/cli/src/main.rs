use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

mod commands;
mod solvers;

use solvers::SolverKind;

#[derive(Parser, Debug)]
#[command(name = "rig-inverse", version, about = "Fit blendshape weights to target meshes")]
struct Cli {
    /// Worker threads for frame- and coordinate-level parallelism.
    #[arg(long, global = true, env = "RIG_INVERSE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic rig, ground-truth weights and noisy targets.
    Synth(SynthArgs),
    /// Build the per-coordinate eigenvalue cache for a model.
    Precompute(PrecomputeArgs),
    /// Solve every target frame with one solver.
    Fit(FitArgs),
    /// Evaluate a weights CSV against the targets.
    Metrics(MetricsArgs),
    /// Sweep solvers and regularization weights and tabulate the trade-off.
    Compare(CompareArgs),
    /// Bradley-Terry strengths from a pairwise win matrix.
    Rank(RankArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 40)]
    m: usize,
    #[arg(long, default_value_t = 500)]
    vertices: usize,
    #[arg(long, default_value_t = 60)]
    pairs: usize,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Target noise standard deviation in cm.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Expected fraction of active weights per frame.
    #[arg(long, default_value_t = 0.2)]
    sparsity: f64,
    /// Corrective magnitude relative to the base deltas.
    #[arg(long, default_value_t = 0.3)]
    corrective_scale: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct PrecomputeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    model: PathBuf,
    /// Eigenvalue cache; built in memory when omitted.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Delta-form target meshes.
    #[arg(long)]
    targets: PathBuf,
    #[arg(long, value_enum, default_value_t = SolverKind::MmPsd)]
    solver: SolverKind,
    #[arg(long, default_value_t = rig_inverse::mm::DEFAULT_ALPHA)]
    alpha: f64,
    #[command(flatten)]
    tuning: SolverTuning,
    /// Weights CSV; per-frame timings go to `<stem>.timing.csv` beside it.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV of per-iteration objective values (`frame,iteration,objective`).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct SolverTuning {
    /// Outer iteration budget of the iterative solvers.
    #[arg(long, default_value_t = rig_inverse::mm::DEFAULT_MAX_ITERATIONS)]
    max_iters: usize,
    /// Convergence threshold on the surrogate decrease.
    #[arg(long, default_value_t = rig_inverse::mm::DEFAULT_TOLERANCE)]
    tol: f64,
    /// Ridge weight of the mm-psd starting point.
    #[arg(long, default_value_t = rig_inverse::mm::DEFAULT_PSD_RIDGE_ALPHA)]
    psd_ridge: f64,
    /// Relative magnitude below which cet-loc zeroes a basis entry.
    #[arg(long, default_value_t = rig_inverse::baselines::DEFAULT_LOCALIZATION_THRESHOLD)]
    loc_threshold: f64,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    targets: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Ground-truth weight frames; when given, errors are measured against
    /// the mesh they produce instead of the targets.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Threshold above which a weight counts as active.
    #[arg(long, default_value_t = rig_inverse::metrics::DEFAULT_CARDINALITY_EPSILON)]
    epsilon: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    targets: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.001,0.01,0.1,1,10,100")]
    alphas: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "mm-psd,mm-0,cet,cet-loc,seol")]
    solvers: Vec<SolverKind>,
    /// Keep every k-th frame.
    #[arg(long, default_value_t = 1)]
    subsample_gap: usize,
    #[arg(long, default_value_t = rig_inverse::metrics::DEFAULT_CARDINALITY_EPSILON)]
    epsilon: f64,
    #[command(flatten)]
    tuning: SolverTuning,
    /// Trade-off table CSV.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-frame metrics CSV.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    /// Optional directory receiving one weights CSV per solver and alpha.
    #[arg(long)]
    weights_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RankArgs {
    #[arg(long)]
    pairwise: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = rig_inverse::ranking::DEFAULT_MAX_ITERATIONS)]
    max_iters: usize,
    #[arg(long, default_value_t = rig_inverse::ranking::DEFAULT_TOLERANCE)]
    tol: f64,
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Precompute(a) => commands::precompute(a),
        Command::Fit(a) => commands::fit(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Compare(a) => commands::compare(a),
        Command::Rank(a) => commands::rank(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
