//! Property tests for the tree, baselines, constraints, solvers and policy.

mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use tree_opo::baselines::{heuristic_value, staged_advantages, BaselineKind};
use tree_opo::constraints::{build_pair_constraints, satisfaction_rate, ConstraintSet};
use tree_opo::env::{token_payload, Environment, Token};
use tree_opo::solver::{project_convex, solve, solve_soft, SolverError, SolverMode};
use tree_opo::trace_store::{NodeId, PrefixTree, StagedGroup, StagedSample, TraceRecord};
use tree_opo::trainer::{train, PolicyTable, TrainConfig};

/// Distinct traces; a repeated token sequence keeps its first reward.
fn records() -> impl Strategy<Value = Vec<(Vec<Token>, bool)>> {
    prop::collection::vec((prop::collection::vec(0u8..3, 1..=4), any::<bool>()), 1..12).prop_map(|v| {
        let mut seen = BTreeSet::new();
        v.into_iter().filter(|(s, _)| seen.insert(s.clone())).collect()
    })
}

fn tree_of(traces: &[(Vec<Token>, bool)]) -> PrefixTree {
    PrefixTree::ingest(traces.iter().map(|(steps, reward)| TraceRecord {
        problem_id: "p".into(),
        steps: steps.iter().map(|&t| token_payload(t)).collect(),
        reward: *reward,
    }))
    .unwrap()
}

/// Every node gets a deterministic mix of extra rollouts.
fn with_rollouts(tree: &PrefixTree, pattern: &[bool]) {
    for (k, node) in tree.nodes().iter().enumerate() {
        for (m, &r) in pattern.iter().enumerate() {
            if (k + m) % 3 != 0 {
                tree.record_rollout(node.id, r).unwrap();
            }
        }
    }
}

fn group_from<'t>(tree: &'t PrefixTree, picks: &[(usize, bool)]) -> StagedGroup<'t> {
    let ids: Vec<NodeId> = tree.nodes().iter().map(|n| n.id).collect();
    let samples = picks
        .iter()
        .map(|&(k, r)| StagedSample::new(ids[k % ids.len()], vec![], r))
        .collect();
    StagedGroup::new(tree, samples).unwrap()
}

fn instance() -> impl Strategy<Value = (Vec<f64>, ConstraintSet)> {
    (2usize..=10, any::<u64>()).prop_map(|(n, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cs = random_dag(&mut rng, n, 0.0);
        (binary_rewards(&mut rng, n), cs)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ancestor_counts_dominate_descendants(traces in records(), pattern in prop::collection::vec(any::<bool>(), 0..6)) {
        let tree = tree_of(&traces);
        with_rollouts(&tree, &pattern);
        for node in tree.nodes() {
            let s = tree.stats(node.id).unwrap();
            prop_assert!(s.successes <= s.total);
            if let Some(parent) = tree.parent(node.id).unwrap() {
                let ps = tree.stats(parent).unwrap();
                prop_assert!(ps.total >= s.total && ps.successes >= s.successes);
            }
        }
    }

    #[test]
    fn shared_prefixes_merge_into_one_node(traces in records()) {
        let tree = tree_of(&traces);
        let distinct: BTreeSet<Vec<Token>> = traces
            .iter()
            .flat_map(|(s, _)| (1..=s.len()).map(move |l| s[..l].to_vec()))
            .collect();
        prop_assert_eq!(tree.len(), distinct.len() + 1);
        for p in &distinct {
            let steps: Vec<String> = p.iter().map(|&t| token_payload(t)).collect();
            let id = tree.find_path(&steps).unwrap();
            prop_assert_eq!(tree.path_tokens(id).unwrap(), p.clone());
        }
    }

    #[test]
    fn pessimistic_expectation_optimistic_order(traces in records(), pattern in prop::collection::vec(any::<bool>(), 0..6)) {
        let tree = tree_of(&traces);
        with_rollouts(&tree, &pattern);
        for node in tree.nodes() {
            let pes = heuristic_value(&tree, node.id, BaselineKind::Pessimistic).unwrap();
            let exp = heuristic_value(&tree, node.id, BaselineKind::Empirical).unwrap();
            let opt = heuristic_value(&tree, node.id, BaselineKind::Optimistic).unwrap();
            prop_assert!(pes <= exp && exp <= opt, "{pes} {exp} {opt}");
        }
    }

    #[test]
    fn staged_advantages_are_centered_and_permutation_invariant(
        traces in records(),
        picks in prop::collection::vec((0usize..64, any::<bool>()), 2..10),
        rotate in 0usize..10,
    ) {
        let tree = tree_of(&traces);
        let group = group_from(&tree, &picks);
        let a = staged_advantages(&group, BaselineKind::Empirical, 0.5).unwrap().into_values();
        prop_assert!(a.iter().sum::<f64>().abs() <= 1e-12);
        let k = rotate % picks.len();
        let mut rotated = picks.clone();
        rotated.rotate_left(k);
        let b = staged_advantages(&group_from(&tree, &rotated), BaselineKind::Empirical, 0.5).unwrap().into_values();
        for i in 0..a.len() {
            prop_assert!((a[(i + k) % a.len()] - b[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn containment_pairs_match_their_predicate(traces in records(), picks in prop::collection::vec((0usize..64, any::<bool>()), 2..12)) {
        let tree = tree_of(&traces);
        let group = group_from(&tree, &picks);
        let pairs = build_pair_constraints(&group, 0.0).unwrap();
        let s = group.samples();
        let emitted: BTreeSet<(usize, usize)> = pairs.iter().map(|p| (p.lower, p.upper)).collect();
        for i in 0..s.len() {
            for j in 0..s.len() {
                let expected = i != j && !s[i].reward && s[j].reward && tree.is_prefix(s[i].prefix, s[j].prefix).unwrap();
                prop_assert_eq!(emitted.contains(&(i, j)), expected);
                prop_assert!(!(emitted.contains(&(i, j)) && emitted.contains(&(j, i))));
            }
        }
        prop_assert!(ConstraintSet::new(s.len(), pairs).unwrap().is_acyclic());
    }

    #[test]
    fn projection_is_idempotent((r, cs) in instance()) {
        let a = project_convex(&r, &cs).unwrap().solution.into_values();
        let b = project_convex(&a, &cs).unwrap().solution.into_values();
        prop_assert!(dist(&a, &b) <= 1e-9);
    }

    #[test]
    fn projection_satisfies_variational_inequality((r, cs) in instance(), seed in any::<u64>()) {
        let a = project_convex(&r, &cs).unwrap().solution.into_values();
        let r0 = centered(&r);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let x: Vec<f64> = (0..r.len()).map(|_| rand::Rng::gen_range(&mut rng, -3.0..3.0)).collect();
            let z = project_convex(&x, &cs).unwrap().solution.into_values();
            let inner: f64 = (0..r.len()).map(|i| (r0[i] - a[i]) * (z[i] - a[i])).sum();
            prop_assert!(inner <= 1e-8, "{inner}");
        }
    }

    #[test]
    fn soft_penalty_approaches_projection((r, cs) in instance()) {
        let p = project_convex(&r, &cs).unwrap().solution.into_values();
        let gaps: Vec<f64> = [1.0, 1e2, 1e4, 1e6]
            .iter()
            .map(|&l| dist(&solve_soft(&r, &cs, l, 0.0).unwrap().solution.into_values(), &p))
            .collect();
        for w in gaps.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{gaps:?}");
        }
        prop_assert!(gaps[3] <= 1e-4, "{gaps:?}");
    }

    #[test]
    fn hard_mode_satisfies_all_or_refuses((r, cs) in instance(), margin in prop::sample::select(vec![0.0, 0.05, 0.3, 1.0])) {
        match solve(&SolverMode::HardMargin { margin }, &r, &cs) {
            Ok(rep) => {
                let a = rep.solution.into_values();
                prop_assert_eq!(satisfaction_rate(&a, &cs.with_margin(margin).unwrap()).unwrap(), 1.0);
            }
            Err(SolverError::Infeasible(_)) => {}
            Err(SolverError::Degenerate) if r.iter().all(|&x| x == r[0]) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn solvers_are_deterministic((r, cs) in instance()) {
        for mode in [SolverMode::ConvexProjection, SolverMode::soft_default(), SolverMode::hard_default()] {
            let a = solve(&mode, &r, &cs).map(|s| s.solution.into_values());
            let b = solve(&mode, &r, &cs).map(|s| s.solution.into_values());
            prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
        }
    }

    #[test]
    fn softmax_is_shift_invariant(logits in prop::collection::vec(-10.0f64..10.0, 2..6), shift in -50.0f64..50.0) {
        let mut p = PolicyTable::new(logits.len(), 0.1);
        p.set_logits(vec![], logits.clone());
        let mut q = PolicyTable::new(logits.len(), 0.1);
        q.set_logits(vec![], logits.iter().map(|x| x + shift).collect());
        for (a, b) in p.probs(&[]).iter().zip(q.probs(&[])) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert!((p.probs(&[]).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn training_is_seed_deterministic(seed in any::<u64>()) {
        let env = Environment::new(3, 3, vec![vec![0, 1, 2], vec![2, 2, 0]]).unwrap();
        let tree = tree_of(&[(vec![0, 1, 2], true), (vec![1, 0, 0], false), (vec![2, 2, 0], true)]);
        let config = TrainConfig { steps: 30, seed, ..TrainConfig::default() };
        let a = train(&config, &env, &tree, &PolicyTable::new(3, 0.1)).unwrap();
        let b = train(&config, &env, &tree, &PolicyTable::new(3, 0.1)).unwrap();
        prop_assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn concurrent_rollouts_linearize(traces in records(), outcomes in prop::collection::vec(any::<bool>(), 1..200)) {
        let tree = Arc::new(tree_of(&traces));
        let ids: Vec<NodeId> = tree.nodes().iter().map(|n| n.id).collect();
        let before: Vec<_> = ids.iter().map(|&i| tree.stats(i).unwrap()).collect();
        std::thread::scope(|s| {
            for chunk in outcomes.chunks(25) {
                let tree = Arc::clone(&tree);
                let ids = ids.clone();
                s.spawn(move || {
                    for (k, &r) in chunk.iter().enumerate() {
                        tree.record_rollout(ids[k % ids.len()], r).unwrap();
                    }
                });
            }
        });
        // sequential replay on a fresh copy
        let fresh = tree_of(&traces);
        for chunk in outcomes.chunks(25) {
            for (k, &r) in chunk.iter().enumerate() {
                fresh.record_rollout(ids[k % ids.len()], r).unwrap();
            }
        }
        for (n, &id) in ids.iter().enumerate() {
            let got = tree.stats(id).unwrap();
            prop_assert_eq!(got, fresh.stats(id).unwrap());
            prop_assert_eq!(tree.direct_stats(id).unwrap(), fresh.direct_stats(id).unwrap());
            prop_assert!(got.total >= before[n].total);
        }
    }
}
