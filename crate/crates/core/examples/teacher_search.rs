//! Generates teacher traces with UCT search on the standard environment.
//!
//! cargo run --example teacher_search -- [seed]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tree_opo::env::{augment_prefixes, target_biased_teacher, teacher_mcts, EnvSpec, Environment, TeacherBudget};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let env = Environment::generate(&EnvSpec { seed, ..EnvSpec::default() })?;
    println!("targets: {:?}", env.targets());
    println!("uniform success rate: {:.5}", env.uniform_success_rate());

    let teacher = target_biased_teacher(&env, 0.3);
    let budget = TeacherBudget::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traces = teacher_mcts(&env, &budget, &teacher, "p0", &mut rng)?;
    for t in &traces {
        println!("{} -> {}", t.steps.join(" "), u8::from(t.reward));
    }
    let tree = augment_prefixes(&traces)?;
    println!(
        "{} traces, {} nodes, max depth {}, max branching {}",
        traces.len(),
        tree.len(),
        tree.max_depth(),
        tree.max_branching()
    );
    Ok(())
}
