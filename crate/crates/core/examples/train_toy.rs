//! Trains a tabular student with tree-structured and flat groups and
//! compares advantage variance and time to 0.9 greedy success.
//!
//! cargo run --release --example train_toy -- [steps]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tree_opo::env::{augment_prefixes, target_biased_teacher, teacher_mcts, EnvSpec, Environment, TeacherBudget};
use tree_opo::trainer::{train, AdvantageStructure, PolicyTable, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let seed = 3;
    let env = Environment::generate(&EnvSpec { seed, ..EnvSpec::default() })?;
    let teacher = target_biased_teacher(&env, 0.3);
    let traces = teacher_mcts(&env, &TeacherBudget::default(), &teacher, "p0", &mut ChaCha8Rng::seed_from_u64(seed))?;
    let tree = augment_prefixes(&traces)?;

    for structure in [AdvantageStructure::Tree, AdvantageStructure::Trace, AdvantageStructure::Flat] {
        let config = TrainConfig { steps, seed, structure, ..TrainConfig::default() };
        let out = train(&config, &env, &tree, &PolicyTable::new(env.alphabet(), config.learning_rate))?;
        let mean_var = out.metrics.iter().map(|m| m.adv_variance).sum::<f64>() / steps.max(1) as f64;
        let hit = out.steps_to(0.9).map_or("never".to_string(), |s| s.to_string());
        println!(
            "{structure:<5} mean adv variance {mean_var:.5} steps to 0.9 {hit:>6} final eval {}",
            out.final_eval()
        );
    }
    Ok(())
}
