//! Majorization-minimization solver for the quadratic inverse rig problem.
//!
//! Each outer iteration linearizes the rig around the current weights,
//! builds a separable quartic upper bound of the fidelity term from the
//! cached spectral data, and minimizes it independently per blendshape
//! inside the feasible box.

use std::time::Instant;

use rayon::prelude::*;

use crate::baselines::RidgeSolveContext;
use crate::error::{check_len, Error, Result};
use crate::model::{residual_terms, BlendshapeModel, ResidualTerms, WeightVector};
use crate::quartic::{minimize_quartic, QuarticSubproblem};
use crate::spectral::SpectralCache;

pub const DEFAULT_ALPHA: f64 = 5.0;
pub const DEFAULT_MAX_ITERATIONS: usize = 100;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_PSD_RIDGE_ALPHA: f64 = 1e-3;
pub const DEFAULT_ALPHA_GRID: [f64; 7] = [0.0, 0.001, 0.01, 0.1, 1.0, 10.0, 100.0];

/// Starting point of the outer loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Initialization {
    /// `w0 = 0` (MM-0).
    Zero,
    /// Clipped ridge solution of the linear model (MM-psd).
    Pseudoinverse,
    /// Caller-supplied `w0`.
    Provided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmConfig {
    pub alpha: f64,
    pub max_outer_iterations: usize,
    pub tolerance: f64,
    pub initialization: Initialization,
    /// Ridge weight of the linear solve used by [`Initialization::Pseudoinverse`].
    pub psd_ridge_alpha: f64,
}

impl Default for MmConfig {
    fn default() -> Self {
        MmConfig {
            alpha: DEFAULT_ALPHA,
            max_outer_iterations: DEFAULT_MAX_ITERATIONS,
            tolerance: DEFAULT_TOLERANCE,
            initialization: Initialization::Zero,
            psd_ridge_alpha: DEFAULT_PSD_RIDGE_ALPHA,
        }
    }
}

impl MmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if self.max_outer_iterations == 0 {
            return Err(Error::InvalidConfig("max_outer_iterations must be positive".into()));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance must be finite and > 0, got {}", self.tolerance)));
        }
        if !(self.psd_ridge_alpha.is_finite() && self.psd_ridge_alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "psd_ridge_alpha must be finite and >= 0, got {}",
                self.psd_ridge_alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub weights: WeightVector,
    /// Objective at the starting point followed by one value per outer iteration.
    pub objective_trace: Vec<f64>,
    /// `|psi(v) - psi(0)|` per outer iteration.
    pub surrogate_gap_trace: Vec<f64>,
    pub iterations_used: usize,
    /// False when the iteration budget ran out before the gap fell below tolerance.
    pub converged: bool,
    pub wall_time_seconds: f64,
}

/// `||f_Q(w) - target||^2` with `target` in delta form.
pub fn fidelity(model: &BlendshapeModel, w: &WeightVector, target: &[f64]) -> Result<f64> {
    check_len("target", model.num_coordinates(), target.len())?;
    let offset = model.quadratic_offset(w)?;
    Ok(offset
        .iter()
        .zip(target)
        .fold(0.0, |acc, (f, t)| acc + (f - t) * (f - t)))
}

/// `||f_Q(w) - target||^2 + alpha * 1^T w`.
pub fn objective(model: &BlendshapeModel, w: &WeightVector, target: &[f64], alpha: f64) -> Result<f64> {
    Ok(fidelity(model, w, target)? + alpha * w.sum())
}

/// Coefficients of the separable quartic bound: one `q` per blendshape and
/// the shared `r` and `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateCoefficients {
    pub q: Vec<f64>,
    pub r: f64,
    pub s: f64,
}

pub fn surrogate_coefficients(terms: &ResidualTerms, cache: &SpectralCache, alpha: f64) -> Result<SurrogateCoefficients> {
    let m = terms.num_blendshapes;
    check_len("spectral cache", cache.num_coordinates(), terms.num_coordinates())?;

    let per_coord: Vec<f64> = (0..terms.num_coordinates())
        .into_par_iter()
        .map(|i| {
            let g = terms.g[i];
            let h = terms.h_row(i);
            g * cache.select(i, g) + h.iter().fold(0.0, |acc, x| acc + x * x)
        })
        .collect();
    let r = 2.0 * per_coord.iter().sum::<f64>();

    let mut gh = vec![0.0; m];
    for (i, &g) in terms.g.iter().enumerate() {
        for (acc, &h) in gh.iter_mut().zip(terms.h_row(i)) {
            *acc += g * h;
        }
    }
    let q = gh.into_iter().map(|x| 2.0 * x + alpha).collect();
    Ok(SurrogateCoefficients { q, r, s: cache.s_coefficient })
}

/// `psi(v)`: the quartic upper bound of the fidelity term at `w + v`, plus `alpha * 1^T v`.
pub fn surrogate_value(terms: &ResidualTerms, cache: &SpectralCache, v: &[f64], alpha: f64) -> Result<f64> {
    let m = terms.num_blendshapes;
    check_len("increment", m, v.len())?;
    check_len("spectral cache", cache.num_coordinates(), terms.num_coordinates())?;
    let v_sq: f64 = v.iter().map(|x| x * x).sum();
    let v_4: f64 = v.iter().map(|x| x * x * x * x).sum();
    let m_f = m as f64;

    let per_coord: Vec<f64> = (0..terms.num_coordinates())
        .into_par_iter()
        .map(|i| {
            let g = terms.g[i];
            let h = terms.h_row(i);
            let hv = h.iter().zip(v).fold(0.0, |acc, (a, b)| acc + a * b);
            let h_sq = h.iter().fold(0.0, |acc, x| acc + x * x);
            let sigma = cache.sigma[i];
            g * g
                + 2.0 * g * hv
                + 2.0 * (g * cache.select(i, g) + h_sq) * v_sq
                + 2.0 * m_f * sigma * sigma * v_4
        })
        .collect();
    Ok(per_coord.iter().sum::<f64>() + alpha * v.iter().sum::<f64>())
}

/// One inner iteration: the increment minimizing the surrogate over the box.
pub fn inner_iteration(terms: &ResidualTerms, cache: &SpectralCache, w: &WeightVector, alpha: f64) -> Result<Vec<f64>> {
    check_len("weight vector", terms.num_blendshapes, w.len())?;
    let coeffs = surrogate_coefficients(terms, cache, alpha)?;
    coeffs
        .q
        .par_iter()
        .zip(w.as_slice())
        .map(|(&q, &wj)| minimize_quartic(&QuarticSubproblem::for_weight(q, coeffs.r, coeffs.s, wj)))
        .collect()
}

/// A model/cache pair ready to solve many frames.
pub struct MmSolver<'a> {
    model: &'a BlendshapeModel,
    cache: &'a SpectralCache,
    ridge: Option<RidgeSolveContext>,
}

impl<'a> MmSolver<'a> {
    pub fn new(model: &'a BlendshapeModel, cache: &'a SpectralCache) -> Result<Self> {
        cache.check_model(model)?;
        Ok(MmSolver { model, cache, ridge: None })
    }

    /// Pre-factors the ridge system used for pseudoinverse starts.
    pub fn with_psd_ridge(mut self, ridge_alpha: f64) -> Result<Self> {
        self.ridge = Some(RidgeSolveContext::new(self.model, ridge_alpha)?);
        Ok(self)
    }

    pub fn model(&self) -> &BlendshapeModel {
        self.model
    }

    fn initial_weights(&self, target: &[f64], config: &MmConfig, w0: Option<&WeightVector>) -> Result<WeightVector> {
        let m = self.model.num_blendshapes();
        if let Some(w0) = w0 {
            check_len("initial weights", m, w0.len())?;
            return Ok(w0.clone());
        }
        match config.initialization {
            Initialization::Zero => Ok(WeightVector::zeros(m)),
            Initialization::Pseudoinverse => match &self.ridge {
                Some(ctx) if ctx.alpha() == config.psd_ridge_alpha => ctx.solve_clipped(target),
                _ => RidgeSolveContext::new(self.model, config.psd_ridge_alpha)?.solve_clipped(target),
            },
            Initialization::Provided => Err(Error::InvalidConfig(
                "provided initialization requires initial weights".into(),
            )),
        }
    }

    pub fn solve(&self, target: &[f64], config: &MmConfig, w0: Option<&WeightVector>) -> Result<SolveReport> {
        config.validate()?;
        check_len("target", self.model.num_coordinates(), target.len())?;
        let start = Instant::now();
        let alpha = config.alpha;

        let mut w = self.initial_weights(target, config, w0)?;
        let mut objective_trace = vec![objective(self.model, &w, target, alpha)?];
        let mut surrogate_gap_trace = Vec::new();
        let mut converged = false;

        for _ in 0..config.max_outer_iterations {
            let terms = residual_terms(self.model, &w, target)?;
            let v = inner_iteration(&terms, self.cache, &w, alpha)?;
            let psi_zero: f64 = terms.g.iter().map(|g| g * g).sum();
            let psi_v = surrogate_value(&terms, self.cache, &v, alpha)?;

            let next: Vec<f64> = w
                .as_slice()
                .iter()
                .zip(&v)
                .map(|(&wj, &vj)| {
                    // endpoints of [-w, 1-w] map exactly onto the bounds
                    if vj == -wj {
                        0.0
                    } else if vj == 1.0 - wj {
                        1.0
                    } else {
                        wj + vj
                    }
                })
                .collect();
            w = WeightVector::new(next)?;

            let gap = (psi_v - psi_zero).abs();
            surrogate_gap_trace.push(gap);
            objective_trace.push(objective(self.model, &w, target, alpha)?);
            if gap < config.tolerance {
                converged = true;
                break;
            }
        }

        Ok(SolveReport {
            weights: w,
            iterations_used: surrogate_gap_trace.len(),
            objective_trace,
            surrogate_gap_trace,
            converged,
            wall_time_seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Runs the outer loop for one frame. `target` is in delta form.
pub fn solve_mm(
    model: &BlendshapeModel,
    cache: &SpectralCache,
    target: &[f64],
    config: &MmConfig,
    w0: Option<&WeightVector>,
) -> Result<SolveReport> {
    MmSolver::new(model, cache)?.solve(target, config, w0)
}
