//! Enumerates a tiny environment exactly: the score-function gradient against
//! central differences, and the vanishing baseline term.
//!
//! cargo run --example exact_gradient

use tree_opo::env::Environment;
use tree_opo::exact::{all_states, baseline_term, exact_gradient, finite_difference_gradient, objective};
use tree_opo::trainer::PolicyTable;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = Environment::new(3, 2, vec![vec![0, 1], vec![2, 2]])?;
    let mut policy = PolicyTable::new(3, 0.1);
    policy.set_logits(vec![], vec![0.5, -0.2, 0.1]);
    policy.set_logits(vec![0], vec![-0.3, 0.9, 0.0]);
    let prefixes = vec![vec![], vec![0], vec![1], vec![2]];

    println!("J = {:.6}", objective(&policy, &env, &prefixes));
    let states = all_states(&env);
    let exact = exact_gradient(&policy, &env, &prefixes).flatten(&states, 3);
    let fd = finite_difference_gradient(&policy, &env, &prefixes, 1e-5).flatten(&states, 3);
    let worst = exact.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max |score function - finite difference| = {worst:.2e}");

    let values = [0.3, 0.9, 0.0, 0.5];
    let term = baseline_term(&policy, &env, &prefixes, &values);
    println!("|E[V(p) grad log pi]| = {:.2e}", term.norm());
    Ok(())
}
