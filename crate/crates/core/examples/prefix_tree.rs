//! Builds a prefix tree from line-delimited traces and queries it.
//!
//! cargo run --example prefix_tree

use std::io::Cursor;

use tree_opo::trace_store::{NodeId, PrefixTree, TraceRecord, TreeError};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let traces = [
        (vec!["A", "B", "C"], true),
        (vec!["A", "B", "D"], false),
        (vec!["A", "J"], true),
        (vec!["E", "F"], false),
    ];
    let mut jsonl = String::new();
    for (steps, reward) in traces {
        let record = TraceRecord {
            problem_id: "Q".into(),
            steps: steps.into_iter().map(String::from).collect(),
            reward,
        };
        jsonl.push_str(&record.to_json_line());
        jsonl.push('\n');
    }
    let tree = PrefixTree::ingest_jsonl(Cursor::new(jsonl))?;

    println!("{} nodes, depth {}, branching {}", tree.len(), tree.max_depth(), tree.max_branching());
    for node in tree.nodes() {
        let s = tree.stats(node.id)?;
        println!(
            "{:<10} depth {} {}/{} terminal={} continuation={}",
            label(&tree, node.id)?,
            node.depth,
            s.successes,
            s.total,
            node.terminal,
            tree.has_successful_continuation(node.id)?
        );
    }

    let ab = tree.find_path(&["A", "B"]).expect("A-B exists");
    let abc = tree.find_path(&["A", "B", "C"]).expect("A-B-C exists");
    println!("A-B is a prefix of A-B-C: {}", tree.is_prefix(ab, abc)?);
    println!("eligible prefixes: {}", tree.eligible().len());

    let dump = serde_json::to_string(&tree.to_dump())?;
    let restored = PrefixTree::from_dump(&serde_json::from_str(&dump)?)?;
    println!("dump round trip keeps {} nodes", restored.len());
    Ok(())
}

fn label(tree: &PrefixTree, id: NodeId) -> Result<String, TreeError> {
    let steps = tree.path_steps(id)?;
    Ok(if steps.is_empty() { "Q".into() } else { format!("Q-{}", steps.join("-")) })
}
