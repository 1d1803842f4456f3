//! Measures gradient variance under several advantage schemes for a fixed
//! policy and tree snapshot.
//!
//! cargo run --release --example variance_probe

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tree_opo::env::{augment_prefixes, target_biased_teacher, teacher_mcts, EnvSpec, Environment, TeacherBudget};
use tree_opo::trainer::{gradient_variance_probe, train, PolicyTable, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = Environment::generate(&EnvSpec::default())?;
    let teacher = target_biased_teacher(&env, 0.3);
    let traces = teacher_mcts(&env, &TeacherBudget::default(), &teacher, "p0", &mut ChaCha8Rng::seed_from_u64(0))?;
    let tree = augment_prefixes(&traces)?;

    // a partly trained student has non-trivial success from most prefixes
    let warmup = TrainConfig { steps: 300, ..TrainConfig::default() };
    let student = train(&warmup, &env, &tree, &PolicyTable::new(env.alphabet(), warmup.learning_rate))?;

    let probe = gradient_variance_probe(&student.policy, &env, &student.tree, &TrainConfig::default(), 4000)?;
    println!("groups                 {}", probe.repeats);
    println!("A = r                  {:.6}", probe.var_zero_baseline);
    println!("A = r - mean(r)        {:.6}", probe.var_centered);
    println!("expectation baseline   {:.6}", probe.var_ve);
    println!("convex projection      {:.6}", probe.var_sae);
    println!(
        "projection kept variance down on {}/{} violating groups",
        probe.contract_held, probe.violating_groups
    );
    Ok(())
}
