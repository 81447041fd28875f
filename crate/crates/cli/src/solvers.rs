use std::time::Instant;

use anyhow::{anyhow, Result};
use clap::ValueEnum;
use rayon::prelude::*;

use rig_inverse::baselines::{localize_basis, solve_projected_descent, solve_seol, PgdConfig, RidgeSolveContext};
use rig_inverse::mm::{objective, Initialization, MmConfig, MmSolver};
use rig_inverse::{BlendshapeModel, FrameArray, SpectralCache, WeightVector};

use crate::SolverTuning;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverKind {
    #[value(name = "mm-0")]
    Mm0,
    #[value(name = "mm-psd")]
    MmPsd,
    Cet,
    #[value(name = "cet-loc")]
    CetLoc,
    Seol,
    Pgd,
}

impl SolverKind {
    pub fn label(self) -> &'static str {
        match self {
            SolverKind::Mm0 => "mm-0",
            SolverKind::MmPsd => "mm-psd",
            SolverKind::Cet => "cet",
            SolverKind::CetLoc => "cet-loc",
            SolverKind::Seol => "seol",
            SolverKind::Pgd => "pgd",
        }
    }

    pub fn needs_cache(self) -> bool {
        matches!(self, SolverKind::Mm0 | SolverKind::MmPsd)
    }

    /// Whether the solver has a regularization weight to sweep.
    pub fn uses_alpha(self) -> bool {
        self != SolverKind::Seol
    }
}

pub struct FrameResult {
    pub weights: WeightVector,
    pub seconds: f64,
    /// Objective after each iteration, starting with the initial point.
    pub trace: Vec<f64>,
    pub converged: bool,
}

fn timed(target: &[f64], model: &BlendshapeModel, alpha: f64, f: impl FnOnce() -> rig_inverse::Result<WeightVector>) -> Result<FrameResult> {
    let start = Instant::now();
    let weights = f()?;
    let seconds = start.elapsed().as_secs_f64();
    let trace = vec![objective(model, &weights, target, alpha)?];
    Ok(FrameResult { weights, seconds, trace, converged: true })
}

/// Solves every frame of `targets`, in parallel over frames. The output order
/// follows the frame order.
pub fn solve_frames(
    kind: SolverKind,
    model: &BlendshapeModel,
    cache: Option<&SpectralCache>,
    targets: &FrameArray,
    alpha: f64,
    tuning: &SolverTuning,
) -> Result<Vec<FrameResult>> {
    let frames: Vec<&[f64]> = targets.rows().collect();
    let per_frame = |f: &(dyn Fn(&[f64]) -> Result<FrameResult> + Sync)| -> Result<Vec<FrameResult>> {
        frames.par_iter().map(|t| f(t)).collect()
    };
    match kind {
        SolverKind::Mm0 | SolverKind::MmPsd => {
            let cache = cache.ok_or_else(|| anyhow!("{} needs a spectral cache", kind.label()))?;
            let mut solver = MmSolver::new(model, cache)?;
            let initialization = if kind == SolverKind::MmPsd {
                solver = solver.with_psd_ridge(tuning.psd_ridge)?;
                Initialization::Pseudoinverse
            } else {
                Initialization::Zero
            };
            let config = MmConfig {
                alpha,
                max_outer_iterations: tuning.max_iters,
                tolerance: tuning.tol,
                initialization,
                psd_ridge_alpha: tuning.psd_ridge,
            };
            config.validate()?;
            per_frame(&|t| {
                let report = solver.solve(t, &config, None)?;
                Ok(FrameResult {
                    weights: report.weights,
                    seconds: report.wall_time_seconds,
                    trace: report.objective_trace,
                    converged: report.converged,
                })
            })
        }
        SolverKind::Cet => {
            let ctx = RidgeSolveContext::new(model, alpha)?;
            per_frame(&|t| timed(t, model, alpha, || ctx.solve_clipped(t)))
        }
        SolverKind::CetLoc => {
            let basis = localize_basis(model, tuning.loc_threshold)?;
            let ctx = RidgeSolveContext::from_row_major(model.num_coordinates(), model.num_blendshapes(), &basis, alpha)?;
            per_frame(&|t| timed(t, model, alpha, || ctx.solve_clipped(t)))
        }
        SolverKind::Seol => per_frame(&|t| timed(t, model, alpha, || solve_seol(model, t))),
        SolverKind::Pgd => {
            let config = PgdConfig::default();
            per_frame(&|t| {
                let report = solve_projected_descent(model, t, alpha, &config)?;
                Ok(FrameResult {
                    weights: report.weights,
                    seconds: report.wall_time_seconds,
                    trace: report.objective_trace,
                    converged: report.converged,
                })
            })
        }
    }
}
