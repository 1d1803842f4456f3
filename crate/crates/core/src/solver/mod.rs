//! Staged-advantage solvers.
//!
//! All modes work on the centered rewards `r0 = r - mean(r)` inside
//! `{1ᵀa = 0}` and bound the advantage norm by `‖a‖² ≤ N` (convex and soft)
//! or fix it at `‖a‖² = N` (hard).
//!
//! * [`project_convex`]: exact Euclidean projection of `r0` onto the convex
//!   feasible set with zero margins. An exact dual active-set method solves
//!   the cone part, then the result is shrunk radially onto the ball, which is
//!   exact because the polyhedral part is a cone. [`project_dykstra`] computes
//!   the same point by alternating projections.
//! * [`solve_soft`]: squared-hinge penalty, solved by semismooth Newton on
//!   the hyperplane plus a scalar multiplier search for the ball.
//! * [`solve_hard`]: equality norm with margins; see [`hard`].

mod active_set;
mod dykstra;
pub mod hard;
mod soft;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{mean, AdvantageVector};
use crate::constraints::{ConstraintError, ConstraintSet};

pub use dykstra::project_dykstra;
pub use hard::solve_hard;
pub use soft::solve_soft;

/// Feasibility tolerance for the convex mode.
pub const CONVEX_TOL: f64 = 1e-9;
/// Relative tolerance on `‖a‖² = N` in hard mode.
pub const HARD_NORM_TOL: f64 = 1e-6;
pub const DEFAULT_SOFT_LAMBDA: f64 = 1.0;
pub const DEFAULT_SOFT_MARGIN: f64 = 1e-3;
pub const DEFAULT_HARD_MARGIN: f64 = 1e-2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("a group needs at least 2 samples, got {0}")]
    TooSmall(usize),
    #[error("reward vector has length {got}, constraints expect {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("inconsistent ordering constraints: cycle through samples {0:?}")]
    Inconsistent(Vec<usize>),
    #[error("convex projection needs zero margins, found {0}")]
    NonZeroMargin(f64),
    #[error("penalty weight {0} must be positive")]
    BadLambda(f64),
    #[error("margin {0} must be finite and non-negative")]
    BadMargin(f64),
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("all rewards are equal, so no unit-variance advantage exists")]
    Degenerate,
    #[error("hard program is infeasible: {0}")]
    Infeasible(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SolverMode {
    ConvexProjection,
    SoftPenalty { lambda: f64, margin: f64 },
    HardMargin { margin: f64 },
}

impl SolverMode {
    pub fn soft_default() -> Self {
        SolverMode::SoftPenalty {
            lambda: DEFAULT_SOFT_LAMBDA,
            margin: DEFAULT_SOFT_MARGIN,
        }
    }

    pub fn hard_default() -> Self {
        SolverMode::HardMargin {
            margin: DEFAULT_HARD_MARGIN,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SolverMode::ConvexProjection => "convex",
            SolverMode::SoftPenalty { .. } => "soft",
            SolverMode::HardMargin { .. } => "hard",
        }
    }
}

impl fmt::Display for SolverMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverMode::ConvexProjection => f.write_str("convex"),
            SolverMode::SoftPenalty { lambda, margin } => write!(f, "soft(lambda={lambda}, margin={margin})"),
            SolverMode::HardMargin { margin } => write!(f, "hard(margin={margin})"),
        }
    }
}

impl FromStr for SolverMode {
    type Err = String;

    /// `convex`, `soft` or `hard`, with the default margins and weight.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "convex" => Ok(SolverMode::ConvexProjection),
            "soft" => Ok(SolverMode::soft_default()),
            "hard" => Ok(SolverMode::hard_default()),
            other => Err(format!("unknown solver {other:?}; expected convex, soft or hard")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub solution: AdvantageVector,
    pub iterations: usize,
    pub converged: bool,
    pub max_violation: f64,
    pub objective: f64,
}

/// Flat record of one solve for metrics output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub mode: String,
    pub n: usize,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub max_violation: f64,
    pub var_r: f64,
    pub var_a: f64,
}

impl SolverDiagnostics {
    pub fn new(mode: &SolverMode, r: &[f64], report: &SolverReport) -> Self {
        let check = check_variance_contract(r, report);
        Self {
            mode: mode.name().to_owned(),
            n: r.len(),
            iterations: report.iterations,
            converged: report.converged,
            objective: report.objective,
            max_violation: report.max_violation,
            var_r: check.var_r,
            var_a: check.var_a,
        }
    }
}

/// Runs the solver selected by `mode`.
pub fn solve(mode: &SolverMode, r: &[f64], cs: &ConstraintSet) -> Result<SolverReport, SolverError> {
    match *mode {
        SolverMode::ConvexProjection => project_convex(r, cs),
        SolverMode::SoftPenalty { lambda, margin } => solve_soft(r, cs, lambda, margin),
        SolverMode::HardMargin { margin } => solve_hard(r, cs, margin),
    }
}

/// Ordering pair as `(lower, upper, margin)`.
pub(crate) type Pair = (usize, usize, f64);

pub(crate) fn validate(r: &[f64], cs: &ConstraintSet) -> Result<(), SolverError> {
    if r.len() != cs.n() {
        return Err(SolverError::Dimension {
            expected: cs.n(),
            got: r.len(),
        });
    }
    if r.len() < 2 {
        return Err(SolverError::TooSmall(r.len()));
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(SolverError::NonFinite);
    }
    Ok(())
}

pub(crate) fn check_margin(margin: f64) -> Result<(), SolverError> {
    if margin.is_finite() && margin >= 0.0 {
        Ok(())
    } else {
        Err(SolverError::BadMargin(margin))
    }
}

pub(crate) fn ensure_acyclic(cs: &ConstraintSet) -> Result<(), SolverError> {
    match cs.find_cycle() {
        Some(c) => Err(SolverError::Inconsistent(c)),
        None => Ok(()),
    }
}

/// Pairs with margin `max(pair margin, floor)`.
pub(crate) fn effective_pairs(cs: &ConstraintSet, floor: f64) -> Vec<Pair> {
    cs.pairs()
        .iter()
        .map(|p| (p.lower, p.upper, p.margin.max(floor)))
        .collect()
}

pub(crate) fn centered(r: &[f64]) -> Vec<f64> {
    let m = mean(r);
    r.iter().map(|x| x - m).collect()
}

pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn pair_violation(a: &[f64], pairs: &[Pair]) -> f64 {
    pairs
        .iter()
        .map(|&(l, u, d)| (a[l] + d - a[u]).max(0.0))
        .fold(0.0, f64::max)
}

/// Scales `v` onto the ball `‖v‖² ≤ radius_sq` if it lies outside.
pub(crate) fn shrink_to_ball(v: &mut [f64], radius_sq: f64) {
    let n2 = norm_sq(v);
    if n2 > radius_sq {
        let s = (radius_sq / n2).sqrt();
        for x in v.iter_mut() {
            *x *= s;
        }
    }
}

/// Euclidean projection of the centered rewards onto
/// `{1ᵀa = 0, ‖a‖² ≤ N, a_lower ≤ a_upper for every pair}`.
pub fn project_convex(r: &[f64], cs: &ConstraintSet) -> Result<SolverReport, SolverError> {
    validate(r, cs)?;
    let m = cs.max_margin();
    if m > 0.0 {
        return Err(SolverError::NonZeroMargin(m));
    }
    ensure_acyclic(cs)?;
    let n = r.len();
    let r0 = centered(r);
    let pairs = effective_pairs(cs, 0.0);
    let proj = active_set::project_polyhedral(&r0, &pairs)?;
    let mut a = proj.x;
    shrink_to_ball(&mut a, n as f64);
    let objective = dist_sq(&a, &r0);
    Ok(SolverReport {
        max_violation: pair_violation(&a, &pairs),
        solution: AdvantageVector::from_zero_mean(a),
        iterations: proj.iterations,
        converged: proj.converged,
        objective,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub var_r: f64,
    pub var_a: f64,
    pub holds: bool,
}

/// Compares the population variances `‖r0‖²/N` and `‖a‖²/N`.
pub fn check_variance_contract(r: &[f64], report: &SolverReport) -> VarianceCheck {
    let n = r.len().max(1) as f64;
    let var_r = norm_sq(&centered(r)) / n;
    let var_a = report.solution.variance();
    VarianceCheck {
        var_r,
        var_a,
        holds: var_a <= var_r + 1e-9,
    }
}

/// Checks `‖P(x) - z‖ ≤ ‖x - z‖ + 1e-9` for a feasible reference point `z`.
pub fn check_distance_contract(x: &[f64], z: &[f64], cs: &ConstraintSet) -> Result<bool, SolverError> {
    validate(x, cs)?;
    if z.len() != x.len() {
        return Err(SolverError::Dimension {
            expected: x.len(),
            got: z.len(),
        });
    }
    let n = x.len() as f64;
    let zm = mean(z);
    if zm.abs() > CONVEX_TOL {
        return Err(SolverError::Precondition(format!("reference point has mean {zm}")));
    }
    if norm_sq(z) > n * (1.0 + CONVEX_TOL) {
        return Err(SolverError::Precondition("reference point lies outside the norm ball".into()));
    }
    let v = cs.max_violation(z);
    if v > CONVEX_TOL {
        return Err(SolverError::Precondition(format!("reference point violates an ordering pair by {v}")));
    }
    let p = project_convex(x, cs)?;
    Ok(dist_sq(p.solution.values(), z).sqrt() <= dist_sq(x, z).sqrt() + 1e-9)
}
