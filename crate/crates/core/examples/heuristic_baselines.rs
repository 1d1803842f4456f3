//! Heuristic baselines and staged advantages on a small hand-built tree.
//!
//! cargo run --example heuristic_baselines

use tree_opo::baselines::{heuristic_value, raw_advantages, staged_advantages, BaselineKind};
use tree_opo::trace_store::{PrefixTree, StagedGroup, StagedSample};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut tree = PrefixTree::new("Q");
    let a = tree.insert_path(&["A"]);
    let ab = tree.insert_path(&["A", "B"]);
    let abc = tree.insert_path(&["A", "B", "C"]);
    let e = tree.insert_path(&["E"]);
    for (node, reward) in [(a, true), (ab, false), (abc, false), (abc, true), (e, false)] {
        tree.record_rollout(node, reward)?;
    }

    let kinds = [BaselineKind::Empirical, BaselineKind::Optimistic, BaselineKind::Pessimistic];
    println!("{:<8} {:>6} {:>12} {:>11} {:>12}", "prefix", "stats", "expectation", "optimistic", "pessimistic");
    for node in [a, ab, abc, e] {
        let s = tree.stats(node)?;
        let v: Vec<f64> = kinds.iter().map(|&k| heuristic_value(&tree, node, k)).collect::<Result<_, _>>()?;
        println!(
            "{:<8} {:>6} {:>12.4} {:>11} {:>12}",
            format!("Q-{}", tree.path_steps(node)?.join("-")),
            format!("{}/{}", s.successes, s.total),
            v[0],
            v[1],
            v[2]
        );
    }

    let group = StagedGroup::new(
        &tree,
        vec![
            StagedSample::new(a, vec![], true),
            StagedSample::new(ab, vec![], false),
            StagedSample::new(abc, vec![], true),
            StagedSample::new(e, vec![], false),
        ],
    )?;
    for kind in kinds {
        let raw = raw_advantages(&group, kind, 0.5)?;
        let adv = staged_advantages(&group, kind, 0.5)?;
        println!("{kind:<12} raw {raw:.3?} centered {:.3?}", adv.values());
    }
    Ok(())
}
