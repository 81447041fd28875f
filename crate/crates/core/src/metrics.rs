//! Evaluation metrics and trade-off tables.

use std::fmt::Write as _;

use crate::error::{check_len, Error, Result};
use crate::model::WeightVector;

pub const DEFAULT_CARDINALITY_EPSILON: f64 = 1e-4;

/// Coordinate RMSE: `sqrt(mean((predicted - reference)^2))` over all `3n` entries.
pub fn rmse(predicted: &[f64], reference: &[f64]) -> Result<f64> {
    check_len("mesh", reference.len(), predicted.len())?;
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = predicted.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sum / predicted.len() as f64).sqrt())
}

/// Per-vertex Euclidean distances between two meshes.
pub fn vertex_errors(predicted: &[f64], reference: &[f64], num_vertices: usize) -> Result<Vec<f64>> {
    check_len("mesh", 3 * num_vertices, predicted.len())?;
    check_len("mesh", 3 * num_vertices, reference.len())?;
    Ok(predicted
        .chunks_exact(3)
        .zip(reference.chunks_exact(3))
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
        .collect())
}

/// Nearest-rank 95th percentile of the per-vertex errors: the value at
/// 1-indexed rank `ceil(0.95 n)` of the sorted distances.
pub fn err_p95(predicted: &[f64], reference: &[f64], num_vertices: usize) -> Result<f64> {
    let mut errors = vertex_errors(predicted, reference, num_vertices)?;
    if errors.is_empty() {
        return Ok(0.0);
    }
    errors.sort_by(f64::total_cmp);
    // integer form of ceil(0.95 n) avoids 0.95 * 100 = 95.00000000000001
    let rank = (95 * errors.len()).div_ceil(100).max(1);
    Ok(errors[rank - 1])
}

/// Number of entries strictly greater than `epsilon`.
pub fn cardinality(w: &[f64], epsilon: f64) -> usize {
    w.iter().filter(|&&x| x > epsilon).count()
}

pub fn l1_norm(w: &[f64]) -> f64 {
    w.iter().map(|x| x.abs()).sum()
}

/// Sum of squared second differences of a weight curve; 0 when fewer than 3 frames.
pub fn smoothness_factor(curve: &[f64]) -> f64 {
    curve
        .windows(3)
        .map(|t| {
            let d = t[0] - 2.0 * t[1] + t[2];
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMetrics {
    pub rmse_coord: f64,
    pub err_p95_vertex: f64,
    pub cardinality: usize,
    pub l1_norm: f64,
}

impl FrameMetrics {
    /// Metrics for one frame; meshes may be absolute or delta form as long as both match.
    pub fn compute(predicted: &[f64], reference: &[f64], num_vertices: usize, w: &WeightVector, epsilon: f64) -> Result<Self> {
        Ok(FrameMetrics {
            rmse_coord: rmse(predicted, reference)?,
            err_p95_vertex: err_p95(predicted, reference, num_vertices)?,
            cardinality: cardinality(w.as_slice(), epsilon),
            l1_norm: l1_norm(w.as_slice()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMetrics {
    pub per_frame: Vec<FrameMetrics>,
    /// One smoothness factor per blendshape curve.
    pub smoothness: Vec<f64>,
}

impl SequenceMetrics {
    /// Builds sequence metrics; `weights` holds one vector per frame in time order.
    pub fn new(per_frame: Vec<FrameMetrics>, weights: &[WeightVector]) -> Result<Self> {
        check_len("frames", per_frame.len(), weights.len())?;
        let m = weights.first().map_or(0, WeightVector::len);
        let mut smoothness = Vec::with_capacity(m);
        for j in 0..m {
            let curve: Vec<f64> = weights.iter().map(|w| w.as_slice()[j]).collect();
            smoothness.push(smoothness_factor(&curve));
        }
        Ok(SequenceMetrics { per_frame, smoothness })
    }

    pub fn mean_smoothness(&self) -> f64 {
        mean(&self.smoothness)
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Results of one solver at one regularization weight over a frame set.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverRun {
    pub solver: String,
    pub alpha: f64,
    pub frames: Vec<usize>,
    pub metrics: SequenceMetrics,
    pub seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffRow {
    pub solver: String,
    pub alpha: f64,
    pub rmse_mean: f64,
    pub p95_mean: f64,
    pub cardinality_mean: f64,
    pub l1_mean: f64,
    pub smoothness_mean: f64,
    pub seconds_mean: f64,
}

pub const TRADEOFF_HEADER: &str = "solver,alpha,rmse_mean,p95_mean,cardinality_mean,l1_mean,smoothness_mean,seconds_mean";
pub const METRICS_HEADER: &str = "solver,alpha,frame,rmse,p95,cardinality,l1,seconds";

/// One row per `(solver, alpha)`: solvers in first-seen order, alphas ascending.
pub fn tradeoff_table(runs: &[SolverRun]) -> Result<Vec<TradeoffRow>> {
    if let Some(first) = runs.first() {
        for run in runs {
            if run.frames != first.frames {
                return Err(Error::InconsistentFrames(format!(
                    "{} (alpha {}) was evaluated on {} frames, {} (alpha {}) on {}",
                    run.solver,
                    run.alpha,
                    run.frames.len(),
                    first.solver,
                    first.alpha,
                    first.frames.len()
                )));
            }
            check_len("per-frame metrics", run.frames.len(), run.metrics.per_frame.len())?;
            check_len("per-frame timings", run.frames.len(), run.seconds.len())?;
        }
    }

    let mut solvers: Vec<&str> = Vec::new();
    for run in runs {
        if !solvers.contains(&run.solver.as_str()) {
            solvers.push(&run.solver);
        }
    }
    let mut rows = Vec::with_capacity(runs.len());
    for solver in solvers {
        let mut group: Vec<&SolverRun> = runs.iter().filter(|r| r.solver == solver).collect();
        group.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
        for run in group {
            let pf = &run.metrics.per_frame;
            let col = |f: fn(&FrameMetrics) -> f64| mean(&pf.iter().map(f).collect::<Vec<_>>());
            rows.push(TradeoffRow {
                solver: run.solver.clone(),
                alpha: run.alpha,
                rmse_mean: col(|m| m.rmse_coord),
                p95_mean: col(|m| m.err_p95_vertex),
                cardinality_mean: col(|m| m.cardinality as f64),
                l1_mean: col(|m| m.l1_norm),
                smoothness_mean: run.metrics.mean_smoothness(),
                seconds_mean: mean(&run.seconds),
            });
        }
    }
    Ok(rows)
}

/// Elbow of an RMSE-vs-cardinality trade-off curve.
///
/// Rows are taken in the given order (alpha ascending). Cardinality is scaled
/// linearly and RMSE logarithmically to `[0, 1]` over the curve, and the point
/// farthest from the chord between the first and last rows is returned.
/// Degenerate curves (fewer than three points or a zero-length chord) fall
/// back to the point closest to the origin of the scaled plane. Returns an
/// index into `rows`.
pub fn select_elbow(rows: &[&TradeoffRow]) -> Option<usize> {
    if rows.is_empty() {
        return None;
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.cardinality_mean).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.rmse_mean.max(f64::MIN_POSITIVE).log10()).collect();
    let scale = |v: &[f64]| -> Vec<f64> {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        v.iter().map(|x| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 }).collect()
    };
    let (x, y) = (scale(&xs), scale(&ys));
    let n = rows.len();
    let (dx, dy) = (x[n - 1] - x[0], y[n - 1] - y[0]);
    let chord = (dx * dx + dy * dy).sqrt();

    let closest_to_origin = || {
        (0..n)
            .min_by(|&a, &b| (x[a].hypot(y[a])).total_cmp(&x[b].hypot(y[b])).then(a.cmp(&b)))
    };
    if n < 3 || chord == 0.0 {
        return closest_to_origin();
    }
    let dist: Vec<f64> = (0..n).map(|i| ((x[i] - x[0]) * dy - (y[i] - y[0]) * dx).abs() / chord).collect();
    let best = (0..n).max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))?;
    if dist[best] == 0.0 {
        return closest_to_origin();
    }
    Some(best)
}

pub fn tradeoff_csv(rows: &[TradeoffRow]) -> String {
    let mut out = String::from(TRADEOFF_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.solver, r.alpha, r.rmse_mean, r.p95_mean, r.cardinality_mean, r.l1_mean, r.smoothness_mean, r.seconds_mean
        );
    }
    out
}

/// Per-frame metrics CSV for a set of runs.
pub fn metrics_csv(runs: &[SolverRun]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for run in runs {
        for ((frame, m), secs) in run.frames.iter().zip(&run.metrics.per_frame).zip(&run.seconds) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                run.solver, run.alpha, frame, m.rmse_coord, m.err_p95_vertex, m.cardinality, m.l1_norm, secs
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rmse_basic_cases() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|x| x - 0.25).collect();
        assert!((rmse(&a, &b).unwrap() - 0.25).abs() < 1e-15);
        assert!(rmse(&a, &a[..3]).is_err());
    }

    #[test]
    fn rmse_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let a: Vec<f64> = (0..90).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..90).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut s = 0.0;
        for i in 0..90 {
            s += (a[i] - b[i]).powi(2);
        }
        assert!((rmse(&a, &b).unwrap() - (s / 90.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn p95_nearest_rank() {
        let reference = vec![0.0; 300];
        let mut predicted = vec![0.0; 300];
        for v in 95..100 {
            predicted[3 * v] = 1.0;
        }
        assert_eq!(err_p95(&predicted, &reference, 100).unwrap(), 0.0);
        predicted[3 * 94] = 1.0;
        assert_eq!(err_p95(&predicted, &reference, 100).unwrap(), 1.0);
        assert_eq!(err_p95(&reference, &reference, 100).unwrap(), 0.0);
        assert!(err_p95(&reference, &reference, 99).is_err());
    }

    #[test]
    fn p95_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let a: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = err_p95(&a, &b, 20).unwrap();
        let c = 3.5;
        let sa: Vec<f64> = a.iter().map(|x| x * c).collect();
        let sb: Vec<f64> = b.iter().map(|x| x * c).collect();
        assert!((err_p95(&sa, &sb, 20).unwrap() - c * base).abs() < 1e-12);
    }

    #[test]
    fn cardinality_thresholds() {
        assert_eq!(cardinality(&[0.0, 0.0], 1e-4), 0);
        assert_eq!(cardinality(&[1e-5, 0.5], 1e-4), 1);
        assert_eq!(cardinality(&[1e-5, 0.5, 0.0], 0.0), 2);
    }

    #[test]
    fn smoothness_cases() {
        assert_eq!(smoothness_factor(&[0.3; 10]), 0.0);
        assert_eq!(smoothness_factor(&[0.0, 1.0, 0.0]), 4.0);
        assert_eq!(smoothness_factor(&[0.0, 0.5, 1.0, 1.5]), 0.0);
        assert_eq!(smoothness_factor(&[0.0, 1.0]), 0.0);
        let curve = [0.1, 0.7, 0.2, 0.9];
        let shifted: Vec<f64> = curve.iter().map(|x| x + 0.25).collect();
        assert!((smoothness_factor(&curve) - smoothness_factor(&shifted)).abs() < 1e-12);
    }

    fn run(solver: &str, alpha: f64, frames: Vec<usize>, card: usize) -> SolverRun {
        let fm = FrameMetrics { rmse_coord: alpha + 1.0, err_p95_vertex: 2.0 * alpha, cardinality: card, l1_norm: 0.5 };
        let w = vec![WeightVector::new(vec![0.5]).unwrap(); frames.len()];
        SolverRun {
            solver: solver.into(),
            alpha,
            metrics: SequenceMetrics::new(vec![fm; frames.len()], &w).unwrap(),
            seconds: vec![0.25; frames.len()],
            frames,
        }
    }

    #[test]
    fn tradeoff_single_run_equals_means() {
        let rows = tradeoff_table(&[run("mm", 5.0, vec![0, 1, 2], 4)]).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!((r.rmse_mean, r.p95_mean, r.cardinality_mean, r.l1_mean), (6.0, 10.0, 4.0, 0.5));
        assert_eq!((r.smoothness_mean, r.seconds_mean), (0.0, 0.25));
    }

    #[test]
    fn tradeoff_orders_alpha_and_checks_frames() {
        let rows = tradeoff_table(&[run("mm", 1.0, vec![0, 1], 3), run("mm", 0.1, vec![0, 1], 5)]).unwrap();
        assert_eq!(rows.iter().map(|r| r.alpha).collect::<Vec<_>>(), vec![0.1, 1.0]);
        assert!(matches!(
            tradeoff_table(&[run("mm", 1.0, vec![0, 1], 3), run("cet", 1.0, vec![0, 2], 3)]),
            Err(Error::InconsistentFrames(_))
        ));
    }

    #[test]
    fn table_fixture_formats() {
        let row = TradeoffRow {
            solver: "MM".into(),
            alpha: 5.0,
            rmse_mean: 0.0898,
            p95_mean: 0.0,
            cardinality_mean: 85.2,
            l1_mean: 9.10,
            smoothness_mean: 0.0034,
            seconds_mean: 11.29,
        };
        let csv = tradeoff_csv(&[row]);
        assert_eq!(csv.lines().nth(1).unwrap(), "MM,5,0.0898,0,85.2,9.1,0.0034,11.29");
    }

    #[test]
    fn elbow_picks_the_bend() {
        let mk = |card: f64, rmse: f64| TradeoffRow {
            solver: "x".into(),
            alpha: 0.0,
            rmse_mean: rmse,
            p95_mean: 0.0,
            cardinality_mean: card,
            l1_mean: 0.0,
            smoothness_mean: 0.0,
            seconds_mean: 0.0,
        };
        let rows = [mk(50.0, 0.10), mk(40.0, 0.11), mk(20.0, 0.12), mk(10.0, 0.5), mk(5.0, 1.0)];
        let refs: Vec<&TradeoffRow> = rows.iter().collect();
        assert_eq!(select_elbow(&refs), Some(2));
        assert_eq!(select_elbow(&refs[..1]), Some(0));
        assert_eq!(select_elbow(&[]), None);

        // error spanning decades: the log axis keeps the last point from
        // flattening the rest of the curve
        let rows = [mk(34.0, 0.0027), mk(21.0, 0.0027), mk(13.0, 0.0033), mk(9.8, 0.018), mk(3.9, 0.135)];
        let refs: Vec<&TradeoffRow> = rows.iter().collect();
        assert_eq!(select_elbow(&refs), Some(2));
    }

    proptest::proptest! {
        #[test]
        fn cardinality_monotone_in_epsilon(w in proptest::collection::vec(0.0f64..1.0, 0..40), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            proptest::prop_assert!(cardinality(&w, hi) <= cardinality(&w, lo));
        }

        #[test]
        fn smoothness_translation_invariant(curve in proptest::collection::vec(-1.0f64..1.0, 0..30), c in -5.0f64..5.0) {
            let shifted: Vec<f64> = curve.iter().map(|x| x + c).collect();
            proptest::prop_assert!((smoothness_factor(&curve) - smoothness_factor(&shifted)).abs() < 1e-9);
        }
    }
}
