//! Monte-Carlo prefix values: spread of the estimate against V(1 - V)/M.
//!
//! cargo run --release --example monte_carlo_baseline

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tree_opo::baselines::value_monte_carlo_tokens;
use tree_opo::env::Environment;
use tree_opo::trainer::PolicyTable;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // one step, ten tokens, three of them accepted: V = 0.3 under a uniform policy
    let env = Environment::new(10, 1, (0..3u8).map(|t| vec![t]))?;
    let policy = PolicyTable::new(10, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let v = 0.3;
    for m in [1usize, 10, 100, 1000] {
        let est: Vec<f64> = (0..5000)
            .map(|_| value_monte_carlo_tokens(&policy, &env, &[], m, &mut rng))
            .collect::<Result<_, _>>()?;
        let mean = est.iter().sum::<f64>() / est.len() as f64;
        let var = est.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (est.len() - 1) as f64;
        println!("M = {m:>4}: mean {mean:.4} variance {var:.6} theory {:.6}", v * (1.0 - v) / m as f64);
    }
    Ok(())
}
