//! Extracts pair and triplet ordering constraints from a staged group.
//!
//! cargo run --example ordering_constraints

use tree_opo::constraints::{assemble, build_pair_constraints, build_triplet_constraints, satisfaction_rate};
use tree_opo::trace_store::{PrefixTree, StagedGroup, StagedSample};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut tree = PrefixTree::new("Q");
    let ab = tree.insert_path(&["A", "B"]);
    let aj = tree.insert_path(&["A", "J"]);
    let abd = tree.insert_path(&["A", "B", "D"]);
    // a rollout from Q-A-B-D succeeded earlier
    tree.record_rollout(abd, true)?;

    let group = StagedGroup::new(
        &tree,
        vec![
            StagedSample::new(ab, vec![], false),
            StagedSample::new(aj, vec![], false),
            StagedSample::new(abd, vec![], true),
        ],
    )?;
    // Q-A-B failed but leads to a success: a[0] < a[2]
    for p in build_pair_constraints(&group, 0.0)? {
        println!("pair     a[{}] + {} <= a[{}]", p.lower, p.margin, p.upper);
    }
    // Q-A-B is already proven below, so the unexplored sibling Q-A-J ranks higher
    for p in build_triplet_constraints(&group, 0.0)? {
        println!("triplet  a[{}] + {} <= a[{}]", p.lower, p.margin, p.upper);
    }
    let cs = assemble(&group, 0.0, 0.0)?;
    println!("{} constraints, acyclic: {}, levels {:?}", cs.len(), cs.is_acyclic(), cs.levels()?);

    let mut centered = group.rewards();
    let mean = centered.iter().sum::<f64>() / centered.len() as f64;
    centered.iter_mut().for_each(|r| *r -= mean);
    println!("centered rewards {centered:.3?} satisfy {:.2} of them", satisfaction_rate(&centered, &cs)?);
    Ok(())
}
