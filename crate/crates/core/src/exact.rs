//! Exact expectations by exhaustive enumeration on small environments.
//!
//! The objective is `J(θ) = mean_p P_θ(success | p)` over a fixed list of
//! start prefixes, so its gradient is what the group estimator targets when
//! prefixes are drawn uniformly from that list.

use crate::env::{Environment, Token};
use crate::trainer::{log_prob_gradient, GradientEstimate, PolicyTable};

/// Every completion of `prefix` to the horizon with its probability and
/// reward. Zero-probability branches are skipped.
pub fn completions(policy: &PolicyTable, env: &Environment, prefix: &[Token]) -> Vec<(Vec<Token>, f64, bool)> {
    let mut out = Vec::new();
    let mut stack = vec![(prefix.to_vec(), 1.0)];
    while let Some((state, p)) = stack.pop() {
        if state.len() >= env.horizon() {
            let reward = env.terminal_reward(&state).unwrap_or(false);
            out.push((state[prefix.len()..].to_vec(), p, reward));
            continue;
        }
        for (a, q) in policy.probs(&state).into_iter().enumerate() {
            if q > 0.0 {
                let mut next = state.clone();
                next.push(a as Token);
                stack.push((next, p * q));
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// `P(success | prefix)`.
pub fn success_probability(policy: &PolicyTable, env: &Environment, prefix: &[Token]) -> f64 {
    completions(policy, env, prefix)
        .iter()
        .filter(|c| c.2)
        .map(|c| c.1)
        .sum()
}

/// `J(θ)` over a uniform list of start prefixes.
pub fn objective(policy: &PolicyTable, env: &Environment, prefixes: &[Vec<Token>]) -> f64 {
    prefixes
        .iter()
        .map(|p| success_probability(policy, env, p))
        .sum::<f64>()
        / prefixes.len() as f64
}

/// `E[(r - V(p)) ∇log π(c|p)]` with `p` uniform over `prefixes` and a fixed
/// baseline value per prefix.
pub fn expected_estimate(
    policy: &PolicyTable,
    env: &Environment,
    prefixes: &[Vec<Token>],
    values: &[f64],
) -> GradientEstimate {
    assert_eq!(prefixes.len(), values.len());
    let mut g = GradientEstimate::zero(1);
    let w = 1.0 / prefixes.len() as f64;
    for (prefix, &v) in prefixes.iter().zip(values) {
        for (c, p, r) in completions(policy, env, prefix) {
            let adv = if r { 1.0 } else { 0.0 } - v;
            if adv != 0.0 {
                g.add_scaled(&log_prob_gradient(policy, prefix, &c), w * p * adv);
            }
        }
    }
    g
}

/// Exact `∇J` via the score function (zero baseline).
pub fn exact_gradient(policy: &PolicyTable, env: &Environment, prefixes: &[Vec<Token>]) -> GradientEstimate {
    expected_estimate(policy, env, prefixes, &vec![0.0; prefixes.len()])
}

/// The baseline's contribution `E[V(p) ∇log π(c|p)]`, which vanishes.
pub fn baseline_term(
    policy: &PolicyTable,
    env: &Environment,
    prefixes: &[Vec<Token>],
    values: &[f64],
) -> GradientEstimate {
    let mut g = GradientEstimate::zero(1);
    let w = 1.0 / prefixes.len() as f64;
    for (prefix, &v) in prefixes.iter().zip(values) {
        for (c, p, _) in completions(policy, env, prefix) {
            g.add_scaled(&log_prob_gradient(policy, prefix, &c), w * p * v);
        }
    }
    g
}

/// Every non-terminal state of the environment, shortest first.
pub fn all_states(env: &Environment) -> Vec<Vec<Token>> {
    (0..env.horizon()).flat_map(|len| env.sequences(len)).collect()
}

/// `∇J` by central differences on every logit of every non-terminal state.
pub fn finite_difference_gradient(
    policy: &PolicyTable,
    env: &Environment,
    prefixes: &[Vec<Token>],
    h: f64,
) -> GradientEstimate {
    let mut g = GradientEstimate::zero(1);
    for state in all_states(env) {
        let base = policy
            .logits(&state)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; env.alphabet()]);
        let mut row = vec![0.0; env.alphabet()];
        for a in 0..env.alphabet() {
            let mut plus = policy.clone();
            let mut l = base.clone();
            l[a] += h;
            plus.set_logits(state.clone(), l);
            let mut minus = policy.clone();
            let mut l = base.clone();
            l[a] -= h;
            minus.set_logits(state.clone(), l);
            row[a] = (objective(&plus, env, prefixes) - objective(&minus, env, prefixes)) / (2.0 * h);
        }
        if row.iter().any(|&v| v != 0.0) {
            g.grads.insert(state, row);
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (Environment, PolicyTable) {
        let env = Environment::new(3, 2, vec![vec![0, 1], vec![2, 2]]).unwrap();
        let mut policy = PolicyTable::new(3, 0.1);
        policy.set_logits(vec![], vec![0.3, -0.2, 0.5]);
        policy.set_logits(vec![0], vec![-1.0, 0.7, 0.1]);
        (env, policy)
    }

    #[test]
    fn probabilities_sum_to_one() {
        let (env, policy) = tiny();
        let total: f64 = completions(&policy, &env, &[]).iter().map(|c| c.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(completions(&policy, &env, &[]).len(), 9);
    }

    #[test]
    fn uniform_success_matches_count() {
        let env = Environment::new(3, 2, vec![vec![0, 1], vec![2, 2]]).unwrap();
        let policy = PolicyTable::new(3, 0.1);
        assert!((success_probability(&policy, &env, &[]) - 2.0 / 9.0).abs() < 1e-15);
        assert!((success_probability(&policy, &env, &[2]) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn score_function_matches_finite_differences() {
        let (env, policy) = tiny();
        let prefixes = vec![vec![], vec![0], vec![2]];
        let exact = exact_gradient(&policy, &env, &prefixes);
        let fd = finite_difference_gradient(&policy, &env, &prefixes, 1e-5);
        let states = all_states(&env);
        let a = exact.flatten(&states, 3);
        let b = fd.flatten(&states, 3);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn baseline_term_vanishes() {
        let (env, policy) = tiny();
        let prefixes = vec![vec![], vec![0], vec![1]];
        let g = baseline_term(&policy, &env, &prefixes, &[0.4, 1.0, 0.25]);
        assert!(g.norm() < 1e-15);
    }
}
