//! Squared-hinge penalty solver.

use nalgebra::{DMatrix, DVector};

use super::{
    centered, check_margin, dist_sq, effective_pairs, norm_sq, pair_violation, shrink_to_ball, validate, Pair,
    SolverError, SolverReport,
};
use crate::baselines::AdvantageVector;
use crate::constraints::ConstraintSet;

pub const SOFT_GRAD_TOL: f64 = 1e-8;
pub const SOFT_MAX_ITERATIONS: usize = 10_000;

/// Minimizes `‖a - r‖² + λ Σ max(0, a_lower - a_upper + δ)²` over
/// `{1ᵀa = 0, ‖a‖² ≤ N}`, warm-started at the (shrunk) centered rewards.
/// Each pair uses the larger of its own margin and `margin`. Cyclic sets are
/// accepted; the penalty absorbs the contradiction.
pub fn solve_soft(r: &[f64], cs: &ConstraintSet, lambda: f64, margin: f64) -> Result<SolverReport, SolverError> {
    validate(r, cs)?;
    check_margin(margin)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(SolverError::BadLambda(lambda));
    }
    let pairs = effective_pairs(cs, margin);
    let r0 = centered(r);
    let mut warm = r0.clone();
    shrink_to_ball(&mut warm, r.len() as f64);
    let out = minimize(&r0, &pairs, lambda, warm);
    Ok(SolverReport {
        objective: objective(&out.a, r, &pairs, lambda),
        max_violation: pair_violation(&out.a, &pairs),
        solution: AdvantageVector::from_zero_mean(out.a),
        iterations: out.iterations,
        converged: out.converged,
    })
}

/// Penalized objective measured against the raw (uncentered) rewards.
pub fn objective(a: &[f64], r: &[f64], pairs: &[Pair], lambda: f64) -> f64 {
    dist_sq(a, r) + lambda * penalty(a, pairs)
}

fn penalty(a: &[f64], pairs: &[Pair]) -> f64 {
    pairs
        .iter()
        .map(|&(l, u, d)| (a[l] - a[u] + d).max(0.0).powi(2))
        .sum()
}

pub(crate) struct SoftSolution {
    pub a: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Ball-constrained minimizer: the unconstrained Newton solution if it lies in
/// the ball, otherwise the multiplier `μ` with `‖a(μ)‖² = N` by bisection.
pub(crate) fn minimize(r0: &[f64], pairs: &[Pair], lambda: f64, warm: Vec<f64>) -> SoftSolution {
    let n = r0.len();
    let radius_sq = n as f64;
    let mut total = 0;
    let mut converged = true;
    let run = |mu: f64, start: Vec<f64>, total: &mut usize, converged: &mut bool| {
        let (a, it, ok) = newton(r0, pairs, lambda, mu, start);
        *total += it;
        *converged &= ok;
        a
    };
    let a = run(0.0, warm, &mut total, &mut converged);
    if norm_sq(&a) <= radius_sq {
        return SoftSolution {
            a,
            iterations: total,
            converged,
        };
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut a_hi = run(hi, a.clone(), &mut total, &mut converged);
    while norm_sq(&a_hi) > radius_sq {
        lo = hi;
        hi *= 2.0;
        a_hi = run(hi, a_hi, &mut total, &mut converged);
        if hi > 1e12 {
            break;
        }
    }
    for _ in 0..200 {
        if hi - lo <= 1e-15 * (1.0 + hi) || (norm_sq(&a_hi) - radius_sq).abs() <= 1e-13 * radius_sq {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let a_mid = run(mid, a_hi.clone(), &mut total, &mut converged);
        if norm_sq(&a_mid) > radius_sq {
            lo = mid;
        } else {
            hi = mid;
            a_hi = a_mid;
        }
    }
    shrink_to_ball(&mut a_hi, radius_sq);
    SoftSolution {
        a: a_hi,
        iterations: total,
        converged,
    }
}

fn phi(a: &[f64], r0: &[f64], pairs: &[Pair], lambda: f64, mu: f64) -> f64 {
    dist_sq(a, r0) + mu * norm_sq(a) + lambda * penalty(a, pairs)
}

/// Semismooth Newton with Armijo backtracking on
/// `‖a - r0‖² + μ‖a‖² + λ·penalty` restricted to the zero-mean hyperplane.
/// Every term maps the hyperplane to itself, so full-space steps stay in it.
fn newton(r0: &[f64], pairs: &[Pair], lambda: f64, mu: f64, start: Vec<f64>) -> (Vec<f64>, usize, bool) {
    let n = r0.len();
    let mut a = DVector::from_vec(start);
    let r = DVector::from_column_slice(r0);
    for it in 0..SOFT_MAX_ITERATIONS {
        let mut g = (&a - &r) * 2.0 + &a * (2.0 * mu);
        let mut h = DMatrix::<f64>::identity(n, n) * (2.0 * (1.0 + mu));
        for &(l, u, d) in pairs {
            let v = a[l] - a[u] + d;
            if v > 0.0 {
                g[l] += 2.0 * lambda * v;
                g[u] -= 2.0 * lambda * v;
                let w = 2.0 * lambda;
                h[(l, l)] += w;
                h[(u, u)] += w;
                h[(l, u)] -= w;
                h[(u, l)] -= w;
            }
        }
        let gm = g.mean();
        g.add_scalar_mut(-gm);
        if g.norm() <= SOFT_GRAD_TOL {
            return (a.iter().cloned().collect(), it, true);
        }
        let step = match h.cholesky() {
            Some(c) => -c.solve(&g),
            None => -g.clone(),
        };
        let slope = g.dot(&step);
        let f0 = phi(a.as_slice(), r0, pairs, lambda, mu);
        let mut t = 1.0;
        loop {
            let cand = &a + &step * t;
            if phi(cand.as_slice(), r0, pairs, lambda, mu) <= f0 + 1e-4 * t * slope || t < 1e-12 {
                a = cand;
                break;
            }
            t *= 0.5;
        }
        let am = a.mean();
        a.add_scalar_mut(-am);
    }
    (a.iter().cloned().collect(), SOFT_MAX_ITERATIONS, false)
}
