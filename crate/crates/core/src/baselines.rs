//! Linear-model benchmark solvers and a projected-gradient reference for the
//! quadratic objective.

use std::time::Instant;

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_len, Error, Result};
use crate::mm::{objective, SolveReport};
use crate::model::{residual_terms, BlendshapeModel, WeightVector};

pub const DEFAULT_LOCALIZATION_THRESHOLD: f64 = 0.05;

/// Factorization of `B^T B + alpha I` for repeated ridge solves.
#[derive(Debug, Clone)]
pub struct RidgeSolveContext {
    basis: DMatrix<f64>,
    gram: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
    alpha: f64,
}

impl RidgeSolveContext {
    pub fn new(model: &BlendshapeModel, alpha: f64) -> Result<Self> {
        Self::from_row_major(model.num_coordinates(), model.num_blendshapes(), model.deltas(), alpha)
    }

    /// Builds the context from an arbitrary row-major `rows x m` basis.
    pub fn from_row_major(rows: usize, m: usize, basis: &[f64], alpha: f64) -> Result<Self> {
        check_len("basis", rows * m, basis.len())?;
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!("ridge alpha must be finite and >= 0, got {alpha}")));
        }
        let basis = DMatrix::from_row_slice(rows, m, basis);
        let gram = basis.tr_mul(&basis);
        let mut regularized = gram.clone();
        for j in 0..m {
            regularized[(j, j)] += alpha;
        }
        let factor = Cholesky::new(regularized).ok_or_else(|| {
            Error::Singular(format!("B^T B + {alpha} I is not positive definite"))
        })?;
        Ok(RidgeSolveContext { basis, gram, factor, alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `B^T B`, column-major `m x m`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Unconstrained ridge solution `(B^T B + alpha I)^-1 B^T target`.
    pub fn solve_raw(&self, target: &[f64]) -> Result<Vec<f64>> {
        check_len("target", self.basis.nrows(), target.len())?;
        let rhs = self.basis.tr_mul(&DVector::from_column_slice(target));
        Ok(self.factor.solve(&rhs).iter().copied().collect())
    }

    /// Ridge solution projected onto `[0, 1]^m`.
    pub fn solve_clipped(&self, target: &[f64]) -> Result<WeightVector> {
        Ok(WeightVector::clipped(self.solve_raw(target)?))
    }
}

/// Ridge regression on the linear model, clipped afterward.
pub fn solve_cet(model: &BlendshapeModel, target: &[f64], alpha: f64) -> Result<WeightVector> {
    RidgeSolveContext::new(model, alpha)?.solve_clipped(target)
}

/// Localized copy of the delta matrix (row-major `3n x m`).
///
/// In each column, every vertex whose displacement norm is below
/// `threshold * (largest vertex displacement in that column)` is zeroed.
pub fn localize_basis(model: &BlendshapeModel, threshold: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidConfig(format!("localization threshold must lie in [0, 1), got {threshold}")));
    }
    let m = model.num_blendshapes();
    let n = model.num_vertices();
    let mut out = model.deltas().to_vec();
    for j in 0..m {
        let norms: Vec<f64> = (0..n)
            .map(|v| {
                (0..3)
                    .map(|c| out[(3 * v + c) * m + j].powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let peak = norms.iter().cloned().fold(0.0, f64::max);
        let cut = threshold * peak;
        for (v, &norm) in norms.iter().enumerate() {
            if norm < cut {
                for c in 0..3 {
                    out[(3 * v + c) * m + j] = 0.0;
                }
            }
        }
    }
    Ok(out)
}

/// Ridge regression on a magnitude-thresholded delta matrix.
pub fn solve_cet_loc(model: &BlendshapeModel, target: &[f64], alpha: f64, threshold: f64) -> Result<WeightVector> {
    let basis = localize_basis(model, threshold)?;
    RidgeSolveContext::from_row_major(model.num_coordinates(), model.num_blendshapes(), &basis, alpha)?
        .solve_clipped(target)
}

/// Mean per-vertex displacement norm of each blendshape.
pub fn mean_displacement(model: &BlendshapeModel) -> Vec<f64> {
    let m = model.num_blendshapes();
    let n = model.num_vertices();
    let mut acc = vec![0.0; m];
    for v in 0..n {
        let rows = [model.delta_row(3 * v), model.delta_row(3 * v + 1), model.delta_row(3 * v + 2)];
        for (j, a) in acc.iter_mut().enumerate() {
            *a += (rows[0][j].powi(2) + rows[1][j].powi(2) + rows[2][j].powi(2)).sqrt();
        }
    }
    acc.into_iter().map(|a| a / n as f64).collect()
}

/// Blendshape visiting order: descending mean displacement, ties by index.
pub fn seol_order(model: &BlendshapeModel) -> Vec<usize> {
    let mags = mean_displacement(model);
    let mut order: Vec<usize> = (0..mags.len()).collect();
    order.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]).then(a.cmp(&b)));
    order
}

/// Sequential one-blendshape-at-a-time projection with a residual update.
pub fn solve_seol(model: &BlendshapeModel, target: &[f64]) -> Result<WeightVector> {
    check_len("target", model.num_coordinates(), target.len())?;
    let mut residual = target.to_vec();
    let mut w = vec![0.0; model.num_blendshapes()];
    for j in seol_order(model) {
        let column = model.delta_column(j);
        let norm_sq: f64 = column.iter().map(|x| x * x).sum();
        if norm_sq == 0.0 {
            warn!("blendshape {j} ({}) has zero displacement; weight fixed at 0", model.names()[j]);
            continue;
        }
        let proj: f64 = column.iter().zip(&residual).map(|(b, r)| b * r).sum();
        let wj = (proj / norm_sq).clamp(0.0, 1.0);
        w[j] = wj;
        if wj != 0.0 {
            for (r, b) in residual.iter_mut().zip(&column) {
                *r -= b * wj;
            }
        }
    }
    WeightVector::new(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgdConfig {
    pub max_iterations: usize,
    /// Stop when the largest weight change of an accepted step falls below this.
    pub step_tolerance: f64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        PgdConfig { max_iterations: 1000, step_tolerance: 1e-10 }
    }
}

/// Projected gradient descent on the full quadratic objective from `w = 0`,
/// with Barzilai-Borwein trial steps and backtracking.
pub fn solve_projected_descent(
    model: &BlendshapeModel,
    target: &[f64],
    alpha: f64,
    config: &PgdConfig,
) -> Result<SolveReport> {
    check_len("target", model.num_coordinates(), target.len())?;
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidConfig(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    let start = Instant::now();
    let m = model.num_blendshapes();

    let gradient = |w: &WeightVector| -> Result<Vec<f64>> {
        let terms = residual_terms(model, w, target)?;
        let mut grad = vec![0.0; m];
        for (i, &g) in terms.g.iter().enumerate() {
            for (acc, &h) in grad.iter_mut().zip(terms.h_row(i)) {
                *acc += g * h;
            }
        }
        Ok(grad.into_iter().map(|x| 2.0 * x + alpha).collect())
    };

    let mut w = WeightVector::zeros(m);
    let mut f = objective(model, &w, target, alpha)?;
    let mut grad = gradient(&w)?;
    let mut trace = vec![f];
    let mut step = {
        let lipschitz: f64 = 2.0 * model.deltas().iter().map(|x| x * x).sum::<f64>();
        if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 }
    };
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = WeightVector::clipped(
                w.as_slice().iter().zip(&grad).map(|(x, g)| x - step * g).collect(),
            );
            let f_trial = objective(model, &trial, target, alpha)?;
            let (mut lin, mut sq) = (0.0, 0.0);
            for ((a, b), g) in trial.as_slice().iter().zip(w.as_slice()).zip(&grad) {
                lin += g * (a - b);
                sq += (a - b) * (a - b);
            }
            if f_trial <= f + lin + sq / (2.0 * step) {
                accepted = Some((trial, f_trial));
                break;
            }
            step *= 0.5;
        }
        let Some((next, f_next)) = accepted else { break };

        let next_grad = gradient(&next)?;
        let (mut ss, mut sy, mut max_change) = (0.0, 0.0, 0.0f64);
        for j in 0..m {
            let s = next.as_slice()[j] - w.as_slice()[j];
            ss += s * s;
            sy += s * (next_grad[j] - grad[j]);
            max_change = max_change.max(s.abs());
        }
        w = next;
        f = f_next;
        grad = next_grad;
        trace.push(f);
        if max_change < config.step_tolerance {
            converged = true;
            break;
        }
        step = if sy > 0.0 { ss / sy } else { step * 2.0 };
    }

    Ok(SolveReport {
        weights: w,
        objective_trace: trace.clone(),
        surrogate_gap_trace: Vec::new(),
        iterations_used: iterations,
        converged,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model_from_columns(n: usize, columns: &[Vec<f64>], correctives: Vec<((usize, usize), Vec<f64>)>) -> BlendshapeModel {
        let names = (0..columns.len()).map(|j| format!("b{j}")).collect();
        BlendshapeModel::from_columns(n, names, vec![0.0; 3 * n], columns, correctives).unwrap()
    }

    fn random_model(rng: &mut ChaCha8Rng, n: usize, m: usize) -> BlendshapeModel {
        let cols: Vec<Vec<f64>> = (0..m).map(|_| (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        model_from_columns(n, &cols, vec![])
    }

    /// Gaussian elimination with partial pivoting.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
            x[row] = (b[row] - s) / a[row][row];
        }
        x
    }

    #[test]
    fn cet_matches_normal_equation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let model = random_model(&mut rng, 10, 8);
        let target: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
        let alpha = 0.1;
        let cols: Vec<Vec<f64>> = (0..8).map(|j| model.delta_column(j)).collect();
        let a: Vec<Vec<f64>> = (0..8)
            .map(|j| {
                (0..8)
                    .map(|k| cols[j].iter().zip(&cols[k]).map(|(x, y)| x * y).sum::<f64>() + if j == k { alpha } else { 0.0 })
                    .collect()
            })
            .collect();
        let b: Vec<f64> = (0..8).map(|j| cols[j].iter().zip(&target).map(|(x, y)| x * y).sum()).collect();
        let oracle = dense_solve(a, b);
        let raw = RidgeSolveContext::new(&model, alpha).unwrap().solve_raw(&target).unwrap();
        for (x, y) in raw.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-8);
        }
        let clipped = solve_cet(&model, &target, alpha).unwrap();
        for (c, y) in clipped.as_slice().iter().zip(&raw) {
            assert_eq!(*c, y.clamp(0.0, 1.0));
        }
    }

    #[test]
    fn cet_orthonormal_recovery() {
        let cols = vec![
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.6, 0.8, 0.0, 0.0, 0.0],
        ];
        let model = model_from_columns(2, &cols, vec![]);
        let truth = [0.3, 0.9, 0.55];
        let target: Vec<f64> = (0..6).map(|i| (0..3).map(|j| cols[j][i] * truth[j]).sum()).collect();
        let w = solve_cet(&model, &target, 0.0).unwrap();
        for (a, b) in w.as_slice().iter().zip(&truth) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cet_zero_target_and_singular() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let model = random_model(&mut rng, 5, 4);
        for alpha in [0.0, 0.5, 10.0] {
            assert!(solve_cet(&model, &[0.0; 15], alpha).unwrap().as_slice().iter().all(|&x| x == 0.0));
        }
        let dup = model_from_columns(1, &[vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]], vec![]);
        assert!(matches!(solve_cet(&dup, &[1.0, 0.0, 0.0], 0.0), Err(Error::Singular(_))));
        assert!(solve_cet(&dup, &[1.0, 0.0, 0.0], 0.1).is_ok());
    }

    #[test]
    fn ridge_shrinks_with_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let model = random_model(&mut rng, 10, 6);
        let target: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut last = f64::INFINITY;
        for alpha in [0.0, 0.01, 0.1, 1.0, 10.0, 100.0] {
            let raw = RidgeSolveContext::new(&model, alpha).unwrap().solve_raw(&target).unwrap();
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm <= last + 1e-12);
            last = norm;
        }
    }

    #[test]
    fn localization_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let model = random_model(&mut rng, 12, 5);
        assert_eq!(localize_basis(&model, 0.0).unwrap(), model.deltas());
        let target: Vec<f64> = (0..36).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(
            solve_cet_loc(&model, &target, 0.1, 1e-300).unwrap(),
            solve_cet(&model, &target, 0.1).unwrap()
        );
        let loc = localize_basis(&model, 0.5).unwrap();
        let nnz = |v: &[f64]| v.iter().filter(|&&x| x != 0.0).count();
        assert!(nnz(&loc) <= nnz(model.deltas()));
        assert!(localize_basis(&model, 1.0).is_err());
    }

    #[test]
    fn localization_keeps_single_vertex_column() {
        let model = model_from_columns(3, &[vec![0.0, 0.0, 0.0, 0.2, -0.1, 0.4, 0.0, 0.0, 0.0]], vec![]);
        assert_eq!(localize_basis(&model, 0.9).unwrap(), model.deltas());
    }

    #[test]
    fn seol_one_dimensional_cases() {
        let model = model_from_columns(1, &[vec![1.0, 0.0, 0.0]], vec![]);
        assert_eq!(solve_seol(&model, &[0.5, 0.0, 0.0]).unwrap().as_slice(), &[0.5]);
        assert_eq!(solve_seol(&model, &[2.0, 0.0, 0.0]).unwrap().as_slice(), &[1.0]);
        assert_eq!(solve_seol(&model, &[-2.0, 0.0, 0.0]).unwrap().as_slice(), &[0.0]);
    }

    #[test]
    fn seol_orthogonal_recovery_and_order() {
        let cols = vec![vec![0.0, 2.0, 0.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0], vec![0.0; 6]];
        let model = model_from_columns(2, &cols, vec![]);
        assert_eq!(seol_order(&model), vec![0, 1, 2]);
        let target = [0.3, 1.4, 0.0, 0.3, 0.0, 0.0];
        let w = solve_seol(&model, &target).unwrap();
        assert_eq!(w.as_slice(), &[0.7, 0.3, 0.0]);
    }

    #[test]
    fn pgd_zero_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let model = random_model(&mut rng, 6, 4);
        let rep = solve_projected_descent(&model, &[0.0; 18], 1.0, &PgdConfig::default()).unwrap();
        assert!(rep.weights.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pgd_matches_coordinate_descent_on_linear_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let model = random_model(&mut rng, 15, 6);
        let target: Vec<f64> = (0..45).map(|_| rng.random_range(-2.0..2.0)).collect();
        let alpha = 0.5;
        // exact coordinate minimization of the box-constrained problem
        let cols: Vec<Vec<f64>> = (0..6).map(|j| model.delta_column(j)).collect();
        let mut w = vec![0.0; 6];
        let mut r = target.iter().map(|t| -t).collect::<Vec<f64>>();
        for _ in 0..5000 {
            for j in 0..6 {
                let nsq: f64 = cols[j].iter().map(|x| x * x).sum();
                let grad = 2.0 * cols[j].iter().zip(&r).map(|(b, ri)| b * ri).sum::<f64>() + alpha;
                let new = (w[j] - grad / (2.0 * nsq)).clamp(0.0, 1.0);
                let d = new - w[j];
                for (ri, b) in r.iter_mut().zip(&cols[j]) {
                    *ri += d * b;
                }
                w[j] = new;
            }
        }
        let oracle = objective(&model, &WeightVector::new(w).unwrap(), &target, alpha).unwrap();
        let rep = solve_projected_descent(&model, &target, alpha, &PgdConfig::default()).unwrap();
        let got = *rep.objective_trace.last().unwrap();
        assert!((got - oracle).abs() < 1e-4, "{got} vs {oracle}");
    }
}
