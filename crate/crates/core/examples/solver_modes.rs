//! Refines centered rewards with the convex, soft and hard solvers.
//!
//! cargo run --example solver_modes

use tree_opo::constraints::{ConstraintSet, OrderingPair, Origin};
use tree_opo::solver::{check_variance_contract, project_dykstra, solve, SolverDiagnostics, SolverMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // sample 0 failed at a prefix of sample 1, which succeeded; 2 and 3 are
    // ordered siblings
    let r = [1.0, 0.0, 0.0, 1.0, 1.0];
    let cs = ConstraintSet::new(
        5,
        vec![
            OrderingPair::new(0, 1, 0.0, Origin::Pair),
            OrderingPair::new(3, 2, 0.0, Origin::Triplet),
        ],
    )?;
    for mode in [SolverMode::ConvexProjection, SolverMode::soft_default(), SolverMode::hard_default()] {
        let report = solve(&mode, &r, &cs)?;
        let diag = SolverDiagnostics::new(&mode, &r, &report);
        println!(
            "{:<7} a = {:.4?} var {:.4} -> {:.4} max violation {:.1e} iterations {}",
            mode.name(),
            report.solution.values(),
            diag.var_r,
            diag.var_a,
            diag.max_violation,
            diag.iterations
        );
    }

    let exact = solve(&SolverMode::ConvexProjection, &r, &cs)?;
    let dykstra = project_dykstra(&r, &cs)?;
    let gap: f64 = exact
        .solution
        .values()
        .iter()
        .zip(dykstra.solution.values())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    println!("active-set vs alternating projections: distance {gap:.2e}");
    println!("variance contract holds: {}", check_variance_contract(&r, &exact).holds);

    let tight = ConstraintSet::new(3, vec![OrderingPair::new(0, 1, 0.0, Origin::Pair), OrderingPair::new(1, 2, 0.0, Origin::Pair)])?;
    match solve(&SolverMode::HardMargin { margin: 2.0 }, &[1.0, 0.0, 0.0], &tight) {
        Ok(_) => println!("unexpectedly feasible"),
        Err(e) => println!("hard mode with margin 2 on a 3-chain: {e}"),
    }
    Ok(())
}
