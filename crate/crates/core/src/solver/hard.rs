//! Equality-norm solver with enforced margins.
//!
//! The program `min ‖a - r0‖²` over `{1ᵀa = 0, ‖a‖² = N, a_l + δ ≤ a_u}` is
//! nonconvex because of the sphere. Write `F` for the convex polyhedron
//! `{1ᵀa = 0, a_l + δ ≤ a_u}`. The solver
//!
//! 1. runs the penalty solver with λ ∈ {1, 10, 10², 10³, 10⁴}, warm-starting
//!    each stage from the previous one;
//! 2. restores feasibility exactly by projecting onto `F`;
//! 3. lifts the point onto the sphere inside `F` (radially when it is inside
//!    the ball, along the segment from the min-norm point of `F` when outside);
//! 4. improves `⟨a, r0⟩` by projected ascent steps followed by the same lift.
//!
//! `F ∩ {‖a‖² = N}` is non-empty iff the min-norm point of `F` has norm at
//! most `√N`, which gives an exact infeasibility test.

use super::active_set::project_polyhedral;
use super::soft::minimize;
use super::{
    centered, check_margin, dist_sq, dot, effective_pairs, ensure_acyclic, norm_sq, pair_violation, shrink_to_ball,
    validate, SolverError, SolverReport, HARD_NORM_TOL,
};
use crate::baselines::AdvantageVector;
use crate::constraints::{satisfaction_rate, ConstraintSet, OrderingPair, Origin};

pub const CONTINUATION: [f64; 5] = [1.0, 10.0, 1e2, 1e3, 1e4];
pub const MAX_REFINE_ROUNDS: usize = 100;

/// Solves the hard program. Each pair uses the larger of its own margin and
/// `margin`. Either every constraint holds with `|‖a‖² - N| ≤ 1e-6·N`, or an
/// error is returned.
pub fn solve_hard(r: &[f64], cs: &ConstraintSet, margin: f64) -> Result<SolverReport, SolverError> {
    validate(r, cs)?;
    check_margin(margin)?;
    ensure_acyclic(cs)?;
    let n = r.len();
    let radius_sq = n as f64;
    let r0 = centered(r);
    if norm_sq(&r0) == 0.0 {
        return Err(SolverError::Degenerate);
    }
    let pairs = effective_pairs(cs, margin);

    let min_norm = project_polyhedral(&vec![0.0; n], &pairs)?;
    let m = min_norm.x;
    if norm_sq(&m) > radius_sq * (1.0 + 1e-12) {
        return Err(SolverError::Infeasible(format!(
            "margins need ‖a‖² ≥ {:.6}, above the budget N = {n}",
            norm_sq(&m)
        )));
    }
    let mut iterations = min_norm.iterations;

    let mut a = r0.clone();
    shrink_to_ball(&mut a, radius_sq);
    for lambda in CONTINUATION {
        let stage = minimize(&r0, &pairs, lambda, a);
        iterations += stage.iterations;
        a = stage.a;
    }
    let y = project_polyhedral(&a, &pairs)?;
    iterations += y.iterations;
    let levels = cs.levels()?;
    let mut a = lift(&y.x, &m, &levels, radius_sq);

    let mut eta = 1.0;
    for _ in 0..MAX_REFINE_ROUNDS {
        iterations += 1;
        let target: Vec<f64> = a.iter().zip(&r0).map(|(x, g)| x + eta * g).collect();
        let p = project_polyhedral(&target, &pairs)?;
        iterations += p.iterations;
        let cand = lift(&p.x, &m, &levels, radius_sq);
        if dot(&cand, &r0) > dot(&a, &r0) + 1e-13 {
            a = cand;
        } else {
            eta *= 0.5;
            if eta < 1e-6 {
                break;
            }
        }
    }

    let check = ConstraintSet::new(
        n,
        pairs
            .iter()
            .map(|&(l, u, d)| OrderingPair::new(l, u, d, Origin::Pair))
            .collect(),
    )?;
    let sat = satisfaction_rate(&a, &check)?;
    let norm_gap = (norm_sq(&a) - radius_sq).abs();
    if sat < 1.0 || norm_gap > HARD_NORM_TOL * radius_sq {
        return Err(SolverError::Infeasible(format!(
            "restoration stalled: satisfaction {sat}, norm gap {norm_gap:e}"
        )));
    }
    Ok(SolverReport {
        objective: dist_sq(&a, r),
        max_violation: pair_violation(&a, &pairs),
        solution: AdvantageVector::from_zero_mean(a),
        iterations,
        converged: true,
    })
}

/// Maps a point of `F` onto `F ∩ {‖a‖² = N}`.
fn lift(y: &[f64], min_norm: &[f64], levels: &[usize], radius_sq: f64) -> Vec<f64> {
    let ny = norm_sq(y);
    if ny >= radius_sq {
        // min_norm is inside the ball and y outside; F is convex, so the
        // crossing point of the segment lies in F.
        let d: Vec<f64> = y.iter().zip(min_norm).map(|(a, b)| a - b).collect();
        let qa = norm_sq(&d);
        if qa == 0.0 {
            return y.to_vec();
        }
        let qb = dot(min_norm, &d);
        let qc = norm_sq(min_norm) - radius_sq;
        let t = (-qb + (qb * qb - qa * qc).max(0.0).sqrt()) / qa;
        return min_norm.iter().zip(&d).map(|(m, d)| m + t * d).collect();
    }
    if ny > 1e-18 {
        // scaling by s ≥ 1 keeps a_u - a_l ≥ δ
        let s = (radius_sq / ny).sqrt();
        return y.iter().map(|v| v * s).collect();
    }
    // y = 0 only when every margin is zero; any strictly ordered point works.
    let lv: Vec<f64> = centered(&levels.iter().map(|&l| l as f64).collect::<Vec<_>>());
    let nl = norm_sq(&lv);
    if nl == 0.0 {
        return y.to_vec();
    }
    let s = (radius_sq / nl).sqrt();
    lv.iter().map(|v| v * s).collect()
}
