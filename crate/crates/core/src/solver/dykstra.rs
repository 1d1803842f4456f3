//! Dykstra's alternating projections for the convex mode.

use super::{
    centered, dist_sq, effective_pairs, ensure_acyclic, norm_sq, pair_violation, shrink_to_ball, validate,
    SolverError, SolverReport,
};
use crate::baselines::{center_in_place, AdvantageVector};
use crate::constraints::ConstraintSet;

pub const DYKSTRA_TOL: f64 = 1e-10;
pub const DYKSTRA_MAX_CYCLES: usize = 50_000;

/// Projection of the centered rewards onto the convex feasible set, computed
/// by cycling over the hyperplane, the ball and each ordering half-space.
/// Pair margins are honoured, so this also projects onto margin-shifted sets.
pub fn project_dykstra(r: &[f64], cs: &ConstraintSet) -> Result<SolverReport, SolverError> {
    validate(r, cs)?;
    ensure_acyclic(cs)?;
    let n = r.len();
    let radius_sq = n as f64;
    let pairs = effective_pairs(cs, 0.0);
    let r0 = centered(r);
    let sets = pairs.len() + 2;
    let mut increments = vec![vec![0.0; n]; sets];
    let mut x = r0.clone();
    let mut converged = false;
    let mut cycles = 0;
    while cycles < DYKSTRA_MAX_CYCLES {
        cycles += 1;
        let previous = x.clone();
        for (s, q) in increments.iter_mut().enumerate() {
            let mut y: Vec<f64> = x.iter().zip(q.iter()).map(|(a, b)| a + b).collect();
            match s {
                0 => center_in_place(&mut y),
                1 => shrink_to_ball(&mut y, radius_sq),
                _ => {
                    let (l, u, d) = pairs[s - 2];
                    let gap = y[u] - y[l];
                    if gap < d {
                        let h = (d - gap) / 2.0;
                        y[u] += h;
                        y[l] -= h;
                    }
                }
            }
            for i in 0..n {
                q[i] = x[i] + q[i] - y[i];
            }
            x = y;
        }
        if dist_sq(&x, &previous).sqrt() <= DYKSTRA_TOL {
            converged = true;
            break;
        }
    }
    debug_assert!(norm_sq(&x).is_finite());
    Ok(SolverReport {
        max_violation: pair_violation(&x, &pairs),
        objective: dist_sq(&x, &r0),
        solution: AdvantageVector::from_zero_mean(x),
        iterations: cycles,
        converged,
    })
}
