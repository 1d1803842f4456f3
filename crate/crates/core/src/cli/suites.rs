//! Check suites behind `tree-opo verify`.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{heuristic_value, raw_advantages, value_monte_carlo_tokens, BaselineKind};
use crate::constraints::{ConstraintSet, OrderingPair, Origin};
use crate::env::{
    augment_prefixes, target_biased_teacher, teacher_mcts, EnvSpec, Environment, TeacherBudget, Token,
};
use crate::exact::{all_states, baseline_term, exact_gradient};
use crate::solver::{check_distance_contract, check_variance_contract, project_convex};
use crate::trace_store::{NodeId, PrefixTree, StagedGroup, StagedSample, TraceRecord};
use crate::trainer::{log_prob_gradient, train, PolicyTable, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    AppendixC,
    Projection,
    Unbiasedness,
    McBaseline,
    Curriculum,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::AppendixC,
        Suite::Projection,
        Suite::Unbiasedness,
        Suite::McBaseline,
        Suite::Curriculum,
    ];

    pub fn run(self) -> Report {
        let checks = match self {
            Suite::AppendixC => appendix_c(),
            Suite::Projection => projection(1000, 0),
            Suite::Unbiasedness => unbiasedness(100_000, 0),
            Suite::McBaseline => mc_baseline(10_000, 0),
            Suite::Curriculum => curriculum(20, 200),
        };
        Report { suite: self, checks }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::AppendixC => "appendixC",
            Suite::Projection => "projection",
            Suite::Unbiasedness => "unbiasedness",
            Suite::McBaseline => "mc-baseline",
            Suite::Curriculum => "curriculum",
        })
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.to_string() == s)
            .ok_or_else(|| {
                let names: Vec<String> = Suite::ALL.iter().map(Suite::to_string).collect();
                format!("unknown suite {s:?}; expected one of {}", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// One line per check, then a summary. `quiet` keeps failures only.
    pub fn write(&self, out: &mut dyn Write, quiet: bool) -> io::Result<()> {
        for c in &self.checks {
            if !quiet || !c.passed {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                writeln!(out, "{tag} {}: {}", c.name, c.detail)?;
            }
        }
        let ok = self.checks.iter().filter(|c| c.passed).count();
        writeln!(out, "suite {}: {ok}/{} checks passed", self.suite, self.checks.len())
    }
}

// ---------------------------------------------------------------- appendixC

/// Prefix paths of the worked example, below the question node `Q`.
const EXAMPLE_PATHS: [(&str, &[&str]); 7] = [
    ("Q-A", &["A"]),
    ("Q-A-B", &["A", "B"]),
    ("Q-A-B-C", &["A", "B", "C"]),
    ("Q-A-J", &["A", "J"]),
    ("Q-E", &["E"]),
    ("Q-E-F", &["E", "F"]),
    ("Q-H", &["H"]),
];

/// The eight rollouts: (prefix, reward).
const EXAMPLE_ROLLOUTS: [(&str, bool); 8] = [
    ("Q-A", true),
    ("Q-A-B", false),
    ("Q-E-F", false),
    ("Q-A-B-C", false),
    ("Q-A-B-C", true),
    ("Q-A-J", true),
    ("Q-E", true),
    ("Q-H", true),
];

/// Printed statistics table: successes, total, V_exp, V_opt, V_pes.
const VALUE_TABLE: [(&str, u64, u64, f64, f64, f64); 7] = [
    ("Q-A", 3, 5, 3.0 / 5.0, 1.0, 0.0),
    ("Q-A-B", 1, 3, 1.0 / 3.0, 1.0, 0.0),
    ("Q-A-B-C", 1, 2, 1.0 / 2.0, 1.0, 0.0),
    ("Q-A-J", 1, 1, 1.0, 1.0, 0.0),
    ("Q-E", 1, 2, 1.0 / 2.0, 1.0, 0.0),
    ("Q-E-F", 0, 1, 0.0, 0.0, 0.0),
    ("Q-H", 1, 1, 1.0, 1.0, 1.0),
];

/// Printed advantage table: prefix, R, then R - V/2 for V_exp, V_opt, V_pes.
const ADVANTAGE_TABLE: [(&str, bool, [f64; 3]); 8] = [
    ("Q-A", true, [7.0 / 10.0, 0.5, 1.0]),
    ("Q-A-B", false, [-1.0 / 6.0, -0.5, 0.0]),
    ("Q-E-F", false, [0.0, -0.5, 0.0]),
    ("Q-A-B-C", false, [-1.0 / 4.0, -0.5, 0.0]),
    ("Q-A-B-C", true, [3.0 / 4.0, 0.5, 1.0]),
    ("Q-A-J", true, [0.5, 0.5, 1.0]),
    ("Q-A-J", true, [0.5, 1.0, 1.0]),
    ("Q-H", true, [3.0 / 5.0, 0.5, 0.5]),
];

const GOLDEN_TOL: f64 = 1e-12;

/// The worked example tree with its eight rollouts recorded.
pub fn worked_example() -> (PrefixTree, Vec<(&'static str, NodeId)>) {
    let mut tree = PrefixTree::new("Q");
    let ids: Vec<(&'static str, NodeId)> = EXAMPLE_PATHS
        .iter()
        .map(|(name, path)| (*name, tree.insert_path(path)))
        .collect();
    for (name, reward) in EXAMPLE_ROLLOUTS {
        tree.record_rollout(lookup(&ids, name), reward).expect("example node");
    }
    (tree, ids)
}

fn lookup(ids: &[(&str, NodeId)], name: &str) -> NodeId {
    ids.iter().find(|(n, _)| *n == name).map(|(_, id)| *id).expect("example prefix")
}

const KINDS: [BaselineKind; 3] = [BaselineKind::Empirical, BaselineKind::Optimistic, BaselineKind::Pessimistic];

fn appendix_c() -> Vec<Check> {
    let (tree, ids) = worked_example();
    let mut checks = Vec::new();
    for (name, succ, total, ve, vo, vp) in VALUE_TABLE {
        let id = lookup(&ids, name);
        let stats = tree.stats(id).expect("example node");
        let mut bad = Vec::new();
        if (stats.successes, stats.total) != (succ, total) {
            bad.push(format!("stats {}/{} (expected {succ}/{total})", stats.successes, stats.total));
        }
        for (kind, want) in KINDS.into_iter().zip([ve, vo, vp]) {
            let got = heuristic_value(&tree, id, kind).expect("heuristic value");
            if (got - want).abs() > GOLDEN_TOL {
                bad.push(format!("{kind} {got} (expected {want})"));
            }
        }
        checks.push(row_check(format!("values {name}"), bad));
    }
    let samples: Vec<StagedSample> = ADVANTAGE_TABLE
        .iter()
        .map(|(name, r, _)| StagedSample::new(lookup(&ids, name), Vec::new(), *r))
        .collect();
    let group = StagedGroup::new(&tree, samples).expect("example group");
    let columns: Vec<Vec<f64>> = KINDS
        .into_iter()
        .map(|k| raw_advantages(&group, k, 0.5).expect("raw advantages"))
        .collect();
    for (row, (name, r, want)) in ADVANTAGE_TABLE.iter().enumerate() {
        let mut bad = Vec::new();
        for (c, kind) in KINDS.into_iter().enumerate() {
            let got = columns[c][row];
            if (got - want[c]).abs() > GOLDEN_TOL {
                bad.push(format!("{kind} {got} (expected {})", want[c]));
            }
        }
        checks.push(row_check(format!("advantages row {} ({name}, R={})", row + 1, u8::from(*r)), bad));
    }
    checks
}

fn row_check(name: String, bad: Vec<String>) -> Check {
    if bad.is_empty() {
        Check::new(name, true, "all cells match")
    } else {
        Check::new(name, false, bad.join("; "))
    }
}

// --------------------------------------------------------------- projection

/// Random acyclic instance: {0,1} rewards and pairs that respect a hidden
/// random order.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, max_n: usize) -> (Vec<f64>, ConstraintSet) {
    let n = rng.gen_range(2..=max_n);
    let r: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let density: f64 = rng.gen_range(0.0..0.6);
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(density) {
                pairs.push(OrderingPair::new(order[i], order[j], 0.0, Origin::Pair));
            }
        }
    }
    (r, ConstraintSet::new(n, pairs).expect("acyclic by construction"))
}

fn projection(instances: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut contract = 0;
    let mut infeasible = 0;
    let mut strict = 0;
    let mut nonzero = 0;
    let mut unit = 0;
    let mut converged = 0;
    for _ in 0..instances {
        let (r, cs) = random_instance(&mut rng, 16);
        let rep = project_convex(&r, &cs).expect("projection");
        converged += usize::from(rep.converged);
        let v = check_variance_contract(&r, &rep);
        contract += usize::from(v.holds);
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let r0: Vec<f64> = r.iter().map(|x| x - mean).collect();
        if cs.max_violation(&r0) > 1e-12 {
            infeasible += 1;
            strict += usize::from(v.var_a < v.var_r);
        }
        if r0.iter().any(|x| *x != 0.0) {
            nonzero += 1;
            unit += usize::from(v.var_a <= 1.0 + 1e-9);
        }
    }
    let mut distance = 0;
    for _ in 0..instances {
        let (_, cs) = random_instance(&mut rng, 16);
        let n = cs.n();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let seed_point: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let z = project_convex(&seed_point, &cs).expect("projection").solution.into_values();
        distance += usize::from(check_distance_contract(&x, &z, &cs).expect("distance check"));
    }
    vec![
        count_check("variance contract", contract, instances),
        count_check("strict when infeasible", strict, infeasible),
        count_check("unit variance bound", unit, nonzero),
        count_check("distance decreasing", distance, instances),
        count_check("converged", converged, instances),
    ]
}

fn count_check(name: &str, ok: usize, total: usize) -> Check {
    Check::new(name, ok == total, format!("{ok}/{total}"))
}

// ------------------------------------------------------------- unbiasedness

/// The 2-step, 3-token environment. The tree holds every trajectory except
/// the failing ones below `[2]`, so the three heuristic baselines differ.
pub fn enumerable_setup() -> (Environment, PolicyTable, PrefixTree) {
    let env = Environment::new(3, 2, vec![vec![0, 1], vec![2, 2], vec![1, 0]]).expect("environment");
    let mut policy = PolicyTable::new(3, 0.1);
    policy.set_logits(vec![], vec![0.4, -0.3, 0.1]);
    policy.set_logits(vec![0], vec![-0.5, 0.8, 0.0]);
    policy.set_logits(vec![1], vec![0.2, 0.2, -0.6]);
    policy.set_logits(vec![2], vec![0.0, -1.0, 0.7]);
    let records: Vec<TraceRecord> = env
        .sequences(2)
        .into_iter()
        .filter(|seq| seq[0] != 2 || seq[1] == 2)
        .map(|seq| TraceRecord {
            problem_id: "enum".into(),
            steps: seq.iter().map(|&t| crate::env::token_payload(t)).collect(),
            reward: env.terminal_reward(&seq).expect("terminal"),
        })
        .collect();
    let tree = augment_prefixes(&records).expect("tree");
    (env, policy, tree)
}

fn unbiasedness(samples: usize, seed: u64) -> Vec<Check> {
    let (env, policy, tree) = enumerable_setup();
    let prefix_ids = tree.eligible();
    let prefixes: Vec<Vec<Token>> = prefix_ids.iter().map(|&p| tree.path_tokens(p).expect("path")).collect();
    let states = all_states(&env);
    let exact = exact_gradient(&policy, &env, &prefixes).flatten(&states, env.alphabet());
    let mut checks = Vec::new();
    for kind in KINDS {
        let values: Vec<f64> = prefix_ids
            .iter()
            .map(|&p| heuristic_value(&tree, p, kind).expect("value"))
            .collect();
        let term = baseline_term(&policy, &env, &prefixes, &values).norm();
        checks.push(Check::new(format!("baseline term {kind}"), term <= 1e-12, format!("|E[V ∇log π]| = {term:.3e}")));

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = exact.len();
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        for _ in 0..samples {
            let k = rng.gen_range(0..prefixes.len());
            let completion = policy.sample_completion(&prefixes[k], env.horizon(), &mut rng);
            let mut full = prefixes[k].clone();
            full.extend(&completion);
            let r = f64::from(u8::from(env.terminal_reward(&full).expect("terminal")));
            let mut g = log_prob_gradient(&policy, &prefixes[k], &completion);
            g.scale(r - values[k]);
            for (i, v) in g.flatten(&states, env.alphabet()).into_iter().enumerate() {
                sum[i] += v;
                sum_sq[i] += v * v;
            }
        }
        let n = samples as f64;
        let mut worst: f64 = 0.0;
        let mut ok = true;
        for i in 0..dim {
            let mean = sum[i] / n;
            let var = (sum_sq[i] / n - mean * mean).max(0.0) * n / (n - 1.0);
            let se = (var / n).sqrt();
            let gap = (mean - exact[i]).abs();
            ok &= gap <= 3.0 * se + 1e-12;
            if se > 0.0 {
                worst = worst.max(gap / se);
            }
        }
        checks.push(Check::new(
            format!("sampled mean {kind}"),
            ok,
            format!("{samples} samples, worst deviation {worst:.2} SE over {dim} components"),
        ));
    }
    checks
}

// -------------------------------------------------------------- mc-baseline

/// One-step environment whose uniform-policy success probability is `k/10`.
fn bernoulli_env(k: usize) -> Environment {
    Environment::new(10, 1, (0..k).map(|t| vec![t as Token])).expect("environment")
}

fn mc_baseline(repeats: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = PolicyTable::new(10, 0.1);
    let eps_grid = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3];
    let mut checks = Vec::new();
    let mut grid_points = 0;
    let mut violations = 0;
    for k in [1usize, 5, 9] {
        let env = bernoulli_env(k);
        let v = k as f64 / 10.0;
        for m in [10usize, 100] {
            let est: Vec<f64> = (0..repeats)
                .map(|_| value_monte_carlo_tokens(&policy, &env, &[], m, &mut rng).expect("estimate"))
                .collect();
            let mean = est.iter().sum::<f64>() / repeats as f64;
            let var = est.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64;
            let theory = v * (1.0 - v) / m as f64;
            let rel = (var - theory).abs() / theory;
            checks.push(Check::new(
                format!("variance V={v} M={m}"),
                rel <= 0.1,
                format!("empirical {var:.6}, theory {theory:.6}, relative error {rel:.4}"),
            ));
            for eps in eps_grid {
                let freq = est.iter().filter(|x| (*x - v).abs() >= eps).count() as f64 / repeats as f64;
                let bound = 2.0 * (-2.0 * m as f64 * eps * eps).exp() + 0.01;
                grid_points += 1;
                violations += usize::from(freq > bound);
            }
        }
    }
    let frac = violations as f64 / grid_points as f64;
    checks.push(Check::new(
        "hoeffding envelope",
        frac < 0.01,
        format!("{violations}/{grid_points} grid points above 2exp(-2Mε²) + 0.01"),
    ));
    checks
}

// --------------------------------------------------------------- curriculum

/// Spearman rank correlation with average ranks for ties; 0 if either side
/// is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                out[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        out
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

/// Depth-vs-`V_E` rank correlation over nodes with at least 5 rollouts, on
/// the tree a default training run leaves behind (teacher traces plus the
/// student's own rollouts).
pub fn curriculum_correlation(seed: u64, steps: usize) -> f64 {
    let env = Environment::generate(&EnvSpec {
        seed,
        ..EnvSpec::default()
    })
    .expect("standard environment");
    let teacher = target_biased_teacher(&env, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traces = teacher_mcts(&env, &TeacherBudget::default(), &teacher, "p", &mut rng).expect("teacher");
    let tree = augment_prefixes(&traces).expect("tree");
    let config = TrainConfig {
        steps,
        seed,
        ..TrainConfig::default()
    };
    let outcome = train(&config, &env, &tree, &PolicyTable::new(env.alphabet(), config.learning_rate)).expect("train");
    let (mut depth, mut value) = (Vec::new(), Vec::new());
    for node in outcome.tree.nodes() {
        let stats = outcome.tree.stats(node.id).expect("node");
        if stats.total >= 5 {
            depth.push(f64::from(node.depth));
            value.push(stats.success_rate().unwrap_or(0.0));
        }
    }
    spearman(&depth, &value)
}

fn curriculum(seeds: u64, steps: usize) -> Vec<Check> {
    use rayon::prelude::*;
    let rhos: Vec<f64> = (0..seeds).into_par_iter().map(|s| curriculum_correlation(s, steps)).collect();
    let mean = rhos.iter().sum::<f64>() / rhos.len() as f64;
    let positive = rhos.iter().filter(|r| **r > 0.0).count();
    vec![Check::new(
        "depth vs V_E spearman",
        mean >= 0.3,
        format!("mean {mean:.4} over {seeds} seeds ({positive} positive), threshold 0.3"),
    )]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.to_string().parse::<Suite>(), Ok(s));
        }
        assert!("everything".parse::<Suite>().is_err());
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 1.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn worked_example_stats() {
        let (tree, ids) = worked_example();
        let qa = tree.stats(lookup(&ids, "Q-A")).unwrap();
        assert_eq!((qa.successes, qa.total), (3, 5));
    }

    #[test]
    fn random_instances_are_acyclic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (r, cs) = random_instance(&mut rng, 8);
            assert_eq!(r.len(), cs.n());
            assert!(cs.is_acyclic());
        }
    }
}
