//! Off-policy correction for teacher-generated completions.
//!
//! cargo run --example importance_weight

use tree_opo::env::{target_biased_teacher, EnvSpec, Environment};
use tree_opo::trainer::{importance_weight, PolicyTable};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = Environment::generate(&EnvSpec::default())?;
    let teacher = target_biased_teacher(&env, 0.3);
    let student = PolicyTable::new(env.alphabet(), 0.1);
    for target in env.targets() {
        let (prefix, completion) = target.split_at(2);
        let w = importance_weight(&student, &teacher, prefix, completion)?;
        println!(
            "prefix {prefix:?} completion {completion:?}: student {:.3e} teacher {:.3e} weight {w:.3e}",
            student.log_prob(prefix, completion).exp(),
            teacher.log_prob(prefix, completion).exp()
        );
    }
    Ok(())
}
