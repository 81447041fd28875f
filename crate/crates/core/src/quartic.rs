//! Box-constrained minimization of `q v + r v^2 + s v^4`.
//!
//! The stationarity condition is the depressed cubic `4s v^3 + 2r v + q = 0`.
//! Its real roots come from Cardano's formula (trigonometric form when there
//! are three), are polished with Newton steps, and any monotone piece of the
//! box that still shows a sign change without a root gets a bracketed solve.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// One separable subproblem of the surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuarticSubproblem {
    pub q: f64,
    pub r: f64,
    pub s: f64,
    pub lower: f64,
    pub upper: f64,
}

impl QuarticSubproblem {
    /// Subproblem for blendshape weight `w`, box `[-w, 1 - w]`.
    pub fn for_weight(q: f64, r: f64, s: f64, w: f64) -> Self {
        QuarticSubproblem { q, r, s, lower: -w, upper: 1.0 - w }
    }

    #[inline]
    pub fn value(&self, v: f64) -> f64 {
        let v2 = v * v;
        self.q * v + self.r * v2 + self.s * v2 * v2
    }

    #[inline]
    pub fn derivative(&self, v: f64) -> f64 {
        4.0 * self.s * v * v * v + 2.0 * self.r * v + self.q
    }

    fn validate(&self) -> Result<()> {
        let fields = [self.q, self.r, self.s, self.lower, self.upper];
        if let Some(offset) = fields.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: "quartic coefficients".into(), offset });
        }
        if self.s < 0.0 {
            return Err(Error::InvalidConfig(format!("quartic coefficient s = {} is negative", self.s)));
        }
        if self.lower > 0.0 || self.upper < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "box [{}, {}] does not contain 0",
                self.lower, self.upper
            )));
        }
        Ok(())
    }
}

/// Global minimizer over `[lower, upper]`; ties go to the smallest `|v|`.
pub fn minimize_quartic(p: &QuarticSubproblem) -> Result<f64> {
    p.validate()?;
    let (lo, hi) = (p.lower, p.upper);

    let mut candidates: Vec<f64> = vec![0.0, lo, hi];
    if p.s > 0.0 {
        candidates.extend(stationary_points(p));
    } else if p.r > 0.0 {
        candidates.push(-p.q / (2.0 * p.r));
    }

    let mut best_v: f64 = 0.0;
    let mut best_f: f64 = 0.0;
    for v in candidates {
        if !(v >= lo && v <= hi) {
            continue;
        }
        let f = p.value(v);
        let tol = 4.0 * f64::EPSILON * (p.q.abs() * v.abs() + p.r.abs() * v * v + p.s * v.powi(4)).max(best_f.abs());
        if f < best_f - tol || (f <= best_f + tol && v.abs() < best_v.abs()) {
            best_v = v;
            best_f = f;
        }
    }
    Ok(best_v)
}

/// Real roots of `4s v^3 + 2r v + q` (requires `s > 0`) that lie in the box.
fn stationary_points(p: &QuarticSubproblem) -> Vec<f64> {
    let (lo, hi) = (p.lower, p.upper);
    let mut roots: Vec<f64> = cardano(p.r / (2.0 * p.s), p.q / (4.0 * p.s))
        .into_iter()
        .filter(|x| x.is_finite())
        .map(|x| newton_polish(p, x))
        .filter(|&x| x >= lo && x <= hi)
        .collect();

    // The derivative is monotone between its own stationary points
    // +-sqrt(-r / 6s); any sign change there must own a root.
    let mut knots = vec![lo];
    if p.r < 0.0 {
        let t = (-p.r / (6.0 * p.s)).sqrt();
        for k in [-t, t] {
            if k > lo && k < hi {
                knots.push(k);
            }
        }
    }
    knots.push(hi);
    for seg in knots.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let (fa, fb) = (p.derivative(a), p.derivative(b));
        if fa == 0.0 || fb == 0.0 || (fa < 0.0) == (fb < 0.0) {
            continue;
        }
        if roots.iter().any(|&x| x >= a && x <= b) {
            continue;
        }
        roots.push(bracketed_root(p, a, b));
    }
    roots
}

/// Real roots of the depressed cubic `x^3 + a x + b = 0`.
fn cardano(a: f64, b: f64) -> Vec<f64> {
    if a == 0.0 {
        return vec![(-b).cbrt()];
    }
    let half_b = 0.5 * b;
    let third_a = a / 3.0;
    let disc = half_b * half_b + third_a * third_a * third_a;
    if disc > 0.0 {
        // one real root; pick the cube root that avoids cancellation
        let u = (-half_b - half_b.signum() * disc.sqrt()).cbrt();
        let x = if u != 0.0 { u - third_a / u } else { 0.0 };
        vec![x]
    } else {
        // three real roots (a < 0)
        let m = 2.0 * (-third_a).sqrt();
        let arg = ((3.0 * b) / (a * m)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        (0..3).map(|k| m * (phi - 2.0 * PI * k as f64 / 3.0).cos()).collect()
    }
}

fn newton_polish(p: &QuarticSubproblem, mut x: f64) -> f64 {
    let mut fx = p.derivative(x);
    for _ in 0..8 {
        let slope = 12.0 * p.s * x * x + 2.0 * p.r;
        if slope == 0.0 || fx == 0.0 {
            break;
        }
        let next = x - fx / slope;
        let f_next = p.derivative(next);
        if !(f_next.abs() < fx.abs()) {
            break;
        }
        x = next;
        fx = f_next;
    }
    x
}

/// Newton with bisection safeguard on a bracket with a sign change.
fn bracketed_root(p: &QuarticSubproblem, mut a: f64, mut b: f64) -> f64 {
    let fa_neg = p.derivative(a) < 0.0;
    let mut x = 0.5 * (a + b);
    for _ in 0..200 {
        let fx = p.derivative(x);
        if fx == 0.0 {
            return x;
        }
        if (fx < 0.0) == fa_neg {
            a = x;
        } else {
            b = x;
        }
        let slope = 12.0 * p.s * x * x + 2.0 * p.r;
        let newton = x - fx / slope;
        x = if slope != 0.0 && newton > a && newton < b { newton } else { 0.5 * (a + b) };
        if b - a <= 4.0 * f64::EPSILON * (a.abs() + b.abs()).max(f64::MIN_POSITIVE) {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense grid, then bisection on the derivative sign around the best grid cell.
    pub(crate) fn grid_oracle(p: &QuarticSubproblem) -> f64 {
        let n = 20_000;
        let h = (p.upper - p.lower) / n as f64;
        let mut best = (p.value(0.0), 0.0);
        for i in 0..=n {
            let v = p.lower + h * i as f64;
            let f = p.value(v);
            if f < best.0 {
                best = (f, v);
            }
        }
        let (mut a, mut b) = ((best.1 - h).max(p.lower), (best.1 + h).min(p.upper));
        if p.derivative(a) < 0.0 && p.derivative(b) > 0.0 {
            while b - a > 1e-12 {
                let mid = 0.5 * (a + b);
                if p.derivative(mid) < 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return 0.5 * (a + b);
        }
        best.1
    }

    fn sub(q: f64, r: f64, s: f64, lower: f64, upper: f64) -> QuarticSubproblem {
        QuarticSubproblem { q, r, s, lower, upper }
    }

    #[test]
    fn even_convex_function_minimizes_at_zero() {
        assert_eq!(minimize_quartic(&sub(0.0, 1.0, 1.0, -1.0, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn all_zero_coefficients_return_zero() {
        assert_eq!(minimize_quartic(&sub(0.0, 0.0, 0.0, -0.3, 0.7)).unwrap(), 0.0);
    }

    #[test]
    fn endpoint_optimum() {
        assert_eq!(minimize_quartic(&sub(-4.0, 1.0, 1.0, 0.0, 0.5)).unwrap(), 0.5);
    }

    #[test]
    fn interior_root() {
        let p = sub(-4.0, 1.0, 1.0, -1.0, 1.0);
        let v = minimize_quartic(&p).unwrap();
        // 4v^3 + 2v - 4 = 0
        let oracle = grid_oracle(&p);
        assert!((v - oracle).abs() < 1e-7, "{v} vs {oracle}");
        assert!((v - 0.835).abs() < 1e-3);
        assert!(p.derivative(v).abs() < 1e-12);
    }

    #[test]
    fn linear_case_without_quartic_term() {
        // s = 0, r > 0: vertex -q / 2r
        assert_eq!(minimize_quartic(&sub(-1.0, 2.0, 0.0, -0.0, 1.0)).unwrap(), 0.25);
        // concave: best endpoint
        assert_eq!(minimize_quartic(&sub(0.1, -1.0, 0.0, -0.5, 1.0)).unwrap(), 1.0);
    }

    #[test]
    fn double_well_picks_deeper_side() {
        // r < 0: two wells, q tilts toward the negative side
        let p = sub(0.05, -1.0, 1.0, -1.0, 1.0);
        let v = minimize_quartic(&p).unwrap();
        assert!(v < 0.0);
        assert!((v - grid_oracle(&p)).abs() < 1e-7);
    }

    #[test]
    fn ties_break_toward_smaller_magnitude() {
        // q = r = s = 0 on an asymmetric box, and a symmetric double well
        assert_eq!(minimize_quartic(&sub(0.0, 0.0, 0.0, -1.0, 0.0)).unwrap(), 0.0);
        let v = minimize_quartic(&sub(0.0, -1.0, 0.5, -1.0, 1.0)).unwrap();
        assert_eq!(v.abs(), 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(minimize_quartic(&sub(f64::NAN, 0.0, 0.0, 0.0, 1.0)).is_err());
        assert!(minimize_quartic(&sub(0.0, 0.0, -1.0, 0.0, 1.0)).is_err());
        assert!(minimize_quartic(&sub(0.0, 0.0, 1.0, 0.1, 1.0)).is_err());
    }

    #[test]
    fn cardano_three_roots() {
        // (x-1)(x-2)(x+3) = x^3 - 7x + 6
        let mut r = cardano(-7.0, 6.0);
        r.sort_by(f64::total_cmp);
        assert!((r[0] + 3.0).abs() < 1e-12 && (r[1] - 1.0).abs() < 1e-12 && (r[2] - 2.0).abs() < 1e-12);
    }
}
