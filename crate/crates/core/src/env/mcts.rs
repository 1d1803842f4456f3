//! UCT teacher search producing offline trace datasets.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{token_payload, EnvError, Environment, Token};
use crate::trace_store::TraceRecord;
use crate::trainer::PolicyTable;

/// Policy used to finish a rollout after the expansion step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Playout {
    #[default]
    Teacher,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherBudget {
    /// Number of search rollouts `B`.
    pub rollouts: usize,
    /// Deepest recorded prefix `d_max`.
    pub max_depth: usize,
    /// Children allowed per node `b`.
    pub max_children: usize,
    pub c_uct: f64,
    #[serde(default)]
    pub playout: Playout,
}

impl Default for TeacherBudget {
    fn default() -> Self {
        Self {
            rollouts: 16,
            max_depth: 5,
            max_children: 5,
            c_uct: 1.4,
            playout: Playout::Teacher,
        }
    }
}

impl TeacherBudget {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.rollouts == 0 {
            return Err(EnvError::Budget("rollouts must be at least 1".into()));
        }
        if self.max_depth == 0 {
            return Err(EnvError::Budget("max_depth must be at least 1".into()));
        }
        if self.max_children == 0 {
            return Err(EnvError::Budget("max_children must be at least 1".into()));
        }
        if !(self.c_uct > 0.0 && self.c_uct.is_finite()) {
            return Err(EnvError::Budget("c_uct must be positive".into()));
        }
        Ok(())
    }
}

struct SearchNode {
    prefix: Vec<Token>,
    children: Vec<(Token, usize)>,
    visits: u64,
    value: f64,
}

impl SearchNode {
    fn new(prefix: Vec<Token>) -> Self {
        Self {
            prefix,
            children: Vec::new(),
            visits: 0,
            value: 0.0,
        }
    }
}

/// Runs `budget.rollouts` UCT rollouts and returns every distinct recorded
/// trace once, in discovery order.
///
/// Each rollout descends by UCT through fully expanded nodes, expands one
/// untried action drawn from the teacher (restricted to untried actions),
/// then plays out to the horizon. The playout path is added to the search
/// tree, so the branching cap holds for every recorded prefix. Steps past
/// `max_depth` are played out for the reward but not recorded.
pub fn teacher_mcts<R: Rng + ?Sized>(
    env: &Environment,
    budget: &TeacherBudget,
    teacher: &PolicyTable,
    problem_id: &str,
    rng: &mut R,
) -> Result<Vec<TraceRecord>, EnvError> {
    budget.validate()?;
    let depth_cap = budget.max_depth.min(env.horizon());
    let child_cap = budget.max_children.min(env.alphabet());
    let mut nodes = vec![SearchNode::new(Vec::new())];
    let mut seen: HashSet<Vec<Token>> = HashSet::new();
    let mut traces = Vec::new();

    for _ in 0..budget.rollouts {
        let mut path = vec![0usize];
        let mut current = 0usize;
        let mut expanded = false;
        while nodes[current].prefix.len() < depth_cap {
            let action = if !expanded && nodes[current].children.len() < child_cap {
                expanded = true;
                let tried: Vec<Token> = nodes[current].children.iter().map(|&(a, _)| a).collect();
                draw_excluding(teacher, &nodes[current].prefix, &tried, env.alphabet(), rng)
            } else if expanded {
                draw_playout(teacher, budget.playout, &nodes[current], child_cap, env.alphabet(), rng)
            } else {
                select_uct(&nodes, current, budget.c_uct)
            };
            current = child_or_insert(&mut nodes, current, action);
            path.push(current);
        }

        let recorded = nodes[current].prefix.clone();
        let mut full = recorded.clone();
        while full.len() < env.horizon() {
            let a = match budget.playout {
                Playout::Teacher => teacher.sample_action(&full, rng),
                Playout::Uniform => rng.gen_range(0..env.alphabet()) as Token,
            };
            full.push(a);
        }
        let reward = env.terminal_reward(&full)?;
        let value = if reward { 1.0 } else { 0.0 };
        for &n in &path {
            nodes[n].visits += 1;
            nodes[n].value += value;
        }
        if seen.insert(recorded.clone()) {
            traces.push(TraceRecord {
                problem_id: problem_id.to_owned(),
                steps: recorded.iter().map(|&t| token_payload(t)).collect(),
                reward,
            });
        }
    }
    Ok(traces)
}

fn child_or_insert(nodes: &mut Vec<SearchNode>, parent: usize, action: Token) -> usize {
    if let Some(&(_, idx)) = nodes[parent].children.iter().find(|&&(a, _)| a == action) {
        return idx;
    }
    let mut prefix = nodes[parent].prefix.clone();
    prefix.push(action);
    let idx = nodes.len();
    nodes.push(SearchNode::new(prefix));
    nodes[parent].children.push((action, idx));
    idx
}

fn select_uct(nodes: &[SearchNode], parent: usize, c_uct: f64) -> Token {
    let log_parent = (nodes[parent].visits.max(1) as f64).ln();
    let mut best: Option<(f64, Token)> = None;
    for &(action, idx) in &nodes[parent].children {
        let child = &nodes[idx];
        let score = if child.visits == 0 {
            f64::INFINITY
        } else {
            child.value / child.visits as f64 + c_uct * (log_parent / child.visits as f64).sqrt()
        };
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, action));
        }
    }
    best.expect("selection only runs on expanded nodes").1
}

/// Teacher draw over the actions not yet tried; uniform over them when the
/// teacher gives them no mass.
fn draw_excluding<R: Rng + ?Sized>(
    teacher: &PolicyTable,
    prefix: &[Token],
    tried: &[Token],
    alphabet: usize,
    rng: &mut R,
) -> Token {
    let probs = teacher.probs(prefix);
    let weights: Vec<f64> = (0..alphabet)
        .map(|a| if tried.contains(&(a as Token)) { 0.0 } else { probs[a] })
        .collect();
    let mass: f64 = weights.iter().sum();
    if mass > 0.0 {
        sample_weighted(&weights, mass, rng)
    } else {
        let untried: Vec<Token> = (0..alphabet as Token).filter(|a| !tried.contains(a)).collect();
        untried[rng.gen_range(0..untried.len())]
    }
}

/// Playout step inside the search tree: free choice while the node still has
/// room for children, otherwise restricted to existing children.
fn draw_playout<R: Rng + ?Sized>(
    teacher: &PolicyTable,
    playout: Playout,
    node: &SearchNode,
    child_cap: usize,
    alphabet: usize,
    rng: &mut R,
) -> Token {
    let allowed: Vec<bool> = if node.children.len() < child_cap {
        vec![true; alphabet]
    } else {
        let mut mask = vec![false; alphabet];
        for &(a, _) in &node.children {
            mask[a as usize] = true;
        }
        mask
    };
    let base: Vec<f64> = match playout {
        Playout::Teacher => teacher.probs(&node.prefix),
        Playout::Uniform => vec![1.0; alphabet],
    };
    let weights: Vec<f64> = base
        .iter()
        .zip(&allowed)
        .map(|(&p, &ok)| if ok { p } else { 0.0 })
        .collect();
    let mass: f64 = weights.iter().sum();
    if mass > 0.0 {
        sample_weighted(&weights, mass, rng)
    } else {
        let options: Vec<Token> = (0..alphabet).filter(|&a| allowed[a]).map(|a| a as Token).collect();
        options[rng.gen_range(0..options.len())]
    }
}

fn sample_weighted<R: Rng + ?Sized>(weights: &[f64], mass: f64, rng: &mut R) -> Token {
    let mut u = rng.gen::<f64>() * mass;
    let mut last = 0;
    for (a, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last = a;
        if u < w {
            return a as Token;
        }
        u -= w;
    }
    last as Token
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{augment_prefixes, greedy_teacher, target_biased_teacher, EnvSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn standard() -> Environment {
        Environment::generate(&EnvSpec::default()).unwrap()
    }

    #[test]
    fn single_rollout_gives_one_trace() {
        let env = standard();
        let teacher = target_biased_teacher(&env, 1.0);
        let budget = TeacherBudget {
            rollouts: 1,
            ..TeacherBudget::default()
        };
        let traces = teacher_mcts(&env, &budget, &teacher, "p", &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(traces.len(), 1);
        assert!(traces[0].steps.len() <= budget.max_depth);
    }

    #[test]
    fn rstar_shape_respects_budget() {
        let env = standard();
        let teacher = target_biased_teacher(&env, 0.3);
        let budget = TeacherBudget::default();
        for seed in 0..20 {
            let traces = teacher_mcts(&env, &budget, &teacher, "p", &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(traces.len() <= 16);
            let tree = augment_prefixes(&traces).unwrap();
            assert!(tree.max_branching() <= 5);
            assert!(tree.max_depth() <= 5);
        }
    }

    #[test]
    fn tight_budget_caps_branching_and_depth() {
        let env = standard();
        let teacher = target_biased_teacher(&env, 1.0);
        let budget = TeacherBudget {
            rollouts: 200,
            max_depth: 3,
            max_children: 2,
            c_uct: 1.4,
            playout: Playout::Uniform,
        };
        let traces = teacher_mcts(&env, &budget, &teacher, "p", &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let tree = augment_prefixes(&traces).unwrap();
        assert!(tree.max_branching() <= 2);
        assert_eq!(tree.max_depth(), 3);
        assert!(traces.iter().all(|t| t.steps.len() == 3));
    }

    #[test]
    fn same_seed_same_traces() {
        let env = standard();
        let teacher = target_biased_teacher(&env, 0.3);
        let run = |seed| {
            teacher_mcts(&env, &TeacherBudget::default(), &teacher, "p", &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn greedy_teacher_finds_single_target() {
        let env = Environment::new(5, 5, vec![vec![4, 3, 2, 1, 0]]).unwrap();
        let teacher = greedy_teacher(&env);
        let traces = teacher_mcts(&env, &TeacherBudget::default(), &teacher, "p", &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(traces.iter().any(|t| t.reward));
    }

    #[test]
    fn invalid_budget_is_rejected() {
        let env = standard();
        let teacher = target_biased_teacher(&env, 1.0);
        let budget = TeacherBudget {
            max_children: 0,
            ..TeacherBudget::default()
        };
        assert!(teacher_mcts(&env, &budget, &teacher, "p", &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
