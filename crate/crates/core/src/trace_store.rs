//! Prefix tree built from full solution traces.
//!
//! Every trace `(question, s1, s2, ..., sk)` contributes the prefixes
//! `question`, `question‖s1`, ... as nodes of a tree rooted at the bare
//! question. Shared prefixes are merged by payload equality. Each node keeps
//! rollout counters that aggregate every outcome recorded at the node or
//! anywhere below it.

use std::fmt;
use std::io::BufRead;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Token;

/// Separator used when a prefix is rendered as one prompt.
pub const STEP_SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("sibling test needs two distinct nodes, got {0} twice")]
    SameNode(NodeId),
    #[error("record {index}: {reason}")]
    Ingest { index: usize, reason: String },
    #[error("no trace records to ingest")]
    NoRecords,
    #[error("tree has no node eligible for prefix sampling")]
    NoEligibleNodes,
    #[error("requested zero prefixes")]
    ZeroSamples,
    #[error("a staged group needs at least 2 samples, got {0}")]
    GroupTooSmall(usize),
    #[error("invalid tree dump: {0}")]
    Dump(String),
}

/// One full teacher trace: the step payloads after the question and the
/// terminal binary reward.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub problem_id: String,
    pub steps: Vec<String>,
    #[serde(with = "binary_reward")]
    pub reward: bool,
}

impl TraceRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace records always serialize")
    }
}

/// Serializes a `bool` reward as the integers 0 and 1 and rejects anything else.
pub mod binary_reward {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(de::Error::custom(format!("reward must be 0 or 1, got {other}"))),
        }
    }
}

/// Snapshot of a node's rollout counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutStats {
    pub successes: u64,
    pub total: u64,
}

impl RolloutStats {
    pub fn failures(&self) -> u64 {
        self.total - self.successes
    }

    pub fn success_rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.successes as f64 / self.total as f64)
    }
}

#[derive(Debug, Default)]
struct Counter {
    successes: AtomicU64,
    total: AtomicU64,
}

impl Counter {
    fn load(&self) -> RolloutStats {
        // total is bumped first on write, so reading successes first keeps
        // successes <= total for concurrent readers.
        let successes = self.successes.load(Ordering::SeqCst);
        let total = self.total.load(Ordering::SeqCst);
        RolloutStats { successes, total }
    }

    fn add(&self, reward: bool) {
        self.total.fetch_add(1, Ordering::SeqCst);
        if reward {
            self.successes.fetch_add(1, Ordering::SeqCst);
        }
    }

    fn set(&self, stats: RolloutStats) {
        self.total.store(stats.total, Ordering::SeqCst);
        self.successes.store(stats.successes, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub payload: String,
    pub depth: u32,
    pub children: Vec<NodeId>,
    /// A complete trace ends here.
    pub terminal: bool,
}

/// Tree of reasoning prefixes with subtree rollout statistics.
///
/// Structure is mutated only through `&mut self`; the counters are atomic so
/// `record_rollout` can be called through a shared reference from several
/// rollout workers at once.
#[derive(Debug)]
pub struct PrefixTree {
    problem_id: String,
    nodes: Vec<Node>,
    stats: Vec<Counter>,
    direct: Vec<Counter>,
}

fn copy_counters(counters: &[Counter]) -> Vec<Counter> {
    counters
        .iter()
        .map(|c| {
            let copy = Counter::default();
            copy.set(c.load());
            copy
        })
        .collect()
}

impl Clone for PrefixTree {
    fn clone(&self) -> Self {
        Self {
            problem_id: self.problem_id.clone(),
            nodes: self.nodes.clone(),
            stats: copy_counters(&self.stats),
            direct: copy_counters(&self.direct),
        }
    }
}

impl PrefixTree {
    /// A tree holding only the bare question.
    pub fn new(problem_id: impl Into<String>) -> Self {
        let problem_id = problem_id.into();
        Self {
            nodes: vec![Node {
                id: NodeId::ROOT,
                parent: None,
                payload: problem_id.clone(),
                depth: 0,
                children: Vec::new(),
                terminal: false,
            }],
            stats: vec![Counter::default()],
            direct: vec![Counter::default()],
            problem_id,
        }
    }

    /// Builds the tree from full traces, merging shared prefixes and
    /// recording each trace's terminal reward at its last node.
    pub fn ingest<I>(records: I) -> Result<Self, TreeError>
    where
        I: IntoIterator<Item = TraceRecord>,
    {
        let mut tree: Option<PrefixTree> = None;
        for (index, record) in records.into_iter().enumerate() {
            let tree = tree.get_or_insert_with(|| PrefixTree::new(record.problem_id.clone()));
            tree.ingest_one(index, &record)?;
        }
        tree.ok_or(TreeError::NoRecords)
    }

    /// Reads line-delimited JSON trace records; blank lines are skipped.
    pub fn ingest_jsonl<R: BufRead>(reader: R) -> Result<Self, TreeError> {
        let mut records = Vec::new();
        for (index, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| TreeError::Ingest {
                index,
                reason: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: TraceRecord = serde_json::from_str(&line).map_err(|e| TreeError::Ingest {
                index,
                reason: e.to_string(),
            })?;
            records.push((index, record));
        }
        let mut tree: Option<PrefixTree> = None;
        for (index, record) in records {
            let tree = tree.get_or_insert_with(|| PrefixTree::new(record.problem_id.clone()));
            tree.ingest_one(index, &record)?;
        }
        tree.ok_or(TreeError::NoRecords)
    }

    fn ingest_one(&mut self, index: usize, record: &TraceRecord) -> Result<(), TreeError> {
        let fail = |reason: String| TreeError::Ingest { index, reason };
        if record.problem_id != self.problem_id {
            return Err(fail(format!(
                "problem id {:?} does not match tree problem {:?}",
                record.problem_id, self.problem_id
            )));
        }
        if record.steps.is_empty() {
            return Err(fail("trace has no steps".into()));
        }
        let leaf = self.insert_path(&record.steps);
        if self.nodes[leaf.index()].terminal {
            return Err(fail(format!("duplicate trace ending at leaf {leaf}")));
        }
        self.nodes[leaf.index()].terminal = true;
        self.record(leaf, record.reward);
        Ok(())
    }

    /// Inserts the prefixes of `steps` below the root and returns the node of
    /// the full path. No statistics are touched.
    pub fn insert_path<S: AsRef<str>>(&mut self, steps: &[S]) -> NodeId {
        let mut current = NodeId::ROOT;
        for step in steps {
            current = self.child_or_insert(current, step.as_ref());
        }
        current
    }

    fn child_or_insert(&mut self, parent: NodeId, payload: &str) -> NodeId {
        if let Some(child) = self.child_by_payload(parent, payload) {
            return child;
        }
        let id = NodeId(self.nodes.len() as u32);
        let depth = self.nodes[parent.index()].depth + 1;
        self.nodes.push(Node {
            id,
            parent: Some(parent),
            payload: payload.to_owned(),
            depth,
            children: Vec::new(),
            terminal: false,
        });
        self.stats.push(Counter::default());
        self.direct.push(Counter::default());
        self.nodes[parent.index()].children.push(id);
        id
    }

    pub fn child_by_payload(&self, parent: NodeId, payload: &str) -> Option<NodeId> {
        self.nodes[parent.index()]
            .children
            .iter()
            .copied()
            .find(|c| self.nodes[c.index()].payload == payload)
    }

    /// Follows `steps` from the root without inserting.
    pub fn find_path<S: AsRef<str>>(&self, steps: &[S]) -> Option<NodeId> {
        steps.iter().try_fold(NodeId::ROOT, |node, step| {
            self.child_by_payload(node, step.as_ref())
        })
    }

    pub fn problem_id(&self) -> &str {
        &self.problem_id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, TreeError> {
        self.nodes.get(id.index()).ok_or(TreeError::UnknownNode(id))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.index() < self.nodes.len()
    }

    pub fn parent(&self, id: NodeId) -> Result<Option<NodeId>, TreeError> {
        Ok(self.node(id)?.parent)
    }

    pub fn depth(&self, id: NodeId) -> Result<u32, TreeError> {
        Ok(self.node(id)?.depth)
    }

    pub fn stats(&self, id: NodeId) -> Result<RolloutStats, TreeError> {
        self.node(id)?;
        Ok(self.stats[id.index()].load())
    }

    /// Counters for rollouts started exactly at `id` (descendants excluded).
    pub fn direct_stats(&self, id: NodeId) -> Result<RolloutStats, TreeError> {
        self.node(id)?;
        Ok(self.direct[id.index()].load())
    }

    /// Step payloads from the first step below the question down to `id`.
    pub fn path_steps(&self, id: NodeId) -> Result<Vec<&str>, TreeError> {
        let mut steps = Vec::with_capacity(self.node(id)?.depth as usize);
        let mut current = id;
        while let Some(parent) = self.nodes[current.index()].parent {
            steps.push(self.nodes[current.index()].payload.as_str());
            current = parent;
        }
        steps.reverse();
        Ok(steps)
    }

    /// The prefix as one prompt: question and steps joined by blank lines.
    pub fn render(&self, id: NodeId) -> Result<String, TreeError> {
        let mut parts = vec![self.problem_id.as_str()];
        parts.extend(self.path_steps(id)?);
        Ok(parts.join(STEP_SEPARATOR))
    }

    /// Step payloads parsed as environment tokens.
    pub fn path_tokens(&self, id: NodeId) -> Result<Vec<Token>, TreeError> {
        self.path_steps(id)?
            .into_iter()
            .map(|s| {
                s.parse::<Token>()
                    .map_err(|_| TreeError::Dump(format!("step {s:?} of node {id} is not a token")))
            })
            .collect()
    }

    /// True iff `i` is a strict ancestor of `j`.
    pub fn is_prefix(&self, i: NodeId, j: NodeId) -> Result<bool, TreeError> {
        self.node(i)?;
        let mut current = self.node(j)?.parent;
        while let Some(node) = current {
            if node == i {
                return Ok(true);
            }
            current = self.nodes[node.index()].parent;
        }
        Ok(false)
    }

    /// True iff `i` and `j` share the same immediate parent.
    pub fn is_sibling(&self, i: NodeId, j: NodeId) -> Result<bool, TreeError> {
        if i == j {
            return Err(TreeError::SameNode(i));
        }
        let pi = self.node(i)?.parent;
        let pj = self.node(j)?.parent;
        Ok(matches!((pi, pj), (Some(a), Some(b)) if a == b))
    }

    /// True iff at least one successful rollout was recorded at or below `p`.
    pub fn has_successful_continuation(&self, p: NodeId) -> Result<bool, TreeError> {
        Ok(self.stats(p)?.successes >= 1)
    }

    /// True iff a rollout started exactly at `p` succeeded. This is the
    /// per-prefix reading of a successful continuation used by the sibling
    /// ordering rule, where a descendant may be proven while its ancestor's
    /// own rollouts all failed.
    pub fn has_direct_success(&self, p: NodeId) -> Result<bool, TreeError> {
        Ok(self.direct_stats(p)?.successes >= 1)
    }

    /// Nodes a group prefix may be drawn from: everything that is not the
    /// terminal leaf of a completed trace. The root is always eligible
    /// unless it is itself terminal.
    pub fn eligible(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| !n.terminal)
            .map(|n| n.id)
            .collect()
    }

    /// Draws `k` prefixes uniformly with replacement from the eligible nodes.
    pub fn sample_prefixes<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<NodeId>, TreeError> {
        if k == 0 {
            return Err(TreeError::ZeroSamples);
        }
        let eligible = self.eligible();
        if eligible.is_empty() {
            return Err(TreeError::NoEligibleNodes);
        }
        Ok((0..k).map(|_| eligible[rng.gen_range(0..eligible.len())]).collect())
    }

    /// Counts one rollout outcome at `p` and every ancestor of `p`.
    pub fn record_rollout(&self, p: NodeId, reward: bool) -> Result<RolloutStats, TreeError> {
        self.node(p)?;
        self.record(p, reward);
        Ok(self.stats[p.index()].load())
    }

    fn record(&self, p: NodeId, reward: bool) {
        self.direct[p.index()].add(reward);
        let mut current = Some(p);
        while let Some(node) = current {
            self.stats[node.index()].add(reward);
            current = self.nodes[node.index()].parent;
        }
    }

    /// Zeroes every counter, keeping the structure.
    pub fn clear_stats(&self) {
        for c in self.stats.iter().chain(&self.direct) {
            c.set(RolloutStats::default());
        }
    }

    /// Last nodes of completed traces.
    pub fn terminal_nodes(&self) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| n.terminal).map(|n| n.id).collect()
    }

    /// Root-to-`id` node ids, root first.
    pub fn ancestry(&self, id: NodeId) -> Result<Vec<NodeId>, TreeError> {
        self.node(id)?;
        let mut path = vec![id];
        let mut current = id;
        while let Some(parent) = self.nodes[current.index()].parent {
            path.push(parent);
            current = parent;
        }
        path.reverse();
        Ok(path)
    }

    pub fn max_branching(&self) -> usize {
        self.nodes.iter().map(|n| n.children.len()).max().unwrap_or(0)
    }

    pub fn max_depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn to_dump(&self) -> TreeDump {
        TreeDump {
            problem_id: self.problem_id.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| {
                    let s = self.stats[n.id.index()].load();
                    let d = self.direct[n.id.index()].load();
                    NodeRecord {
                        id: n.id,
                        parent: n.parent,
                        depth: n.depth,
                        payload: n.payload.clone(),
                        successes: s.successes,
                        total: s.total,
                        terminal: n.terminal,
                        direct_successes: d.successes,
                        direct_total: d.total,
                    }
                })
                .collect(),
        }
    }

    /// Rebuilds a tree from its export, checking the structural invariants.
    pub fn from_dump(dump: &TreeDump) -> Result<Self, TreeError> {
        let bad = |msg: String| TreeError::Dump(msg);
        let first = dump.nodes.first().ok_or_else(|| bad("no nodes".into()))?;
        if first.id != NodeId::ROOT || first.parent.is_some() || first.depth != 0 {
            return Err(bad("first node must be the root with id 0, no parent, depth 0".into()));
        }
        let mut nodes: Vec<Node> = Vec::with_capacity(dump.nodes.len());
        let stats: Vec<Counter> = dump.nodes.iter().map(|_| Counter::default()).collect();
        let direct: Vec<Counter> = dump.nodes.iter().map(|_| Counter::default()).collect();
        for (position, record) in dump.nodes.iter().enumerate() {
            if record.id.index() != position {
                return Err(bad(format!("node ids must be dense and ordered, found {} at {position}", record.id)));
            }
            if record.successes > record.total || record.direct_successes > record.direct_total {
                return Err(bad(format!("node {} has more successes than rollouts", record.id)));
            }
            if record.direct_total > record.total {
                return Err(bad(format!("node {} has more direct rollouts than subtree rollouts", record.id)));
            }
            if let Some(parent) = record.parent {
                if parent.index() >= position {
                    return Err(bad(format!("node {} refers to later or unknown parent {parent}", record.id)));
                }
                if record.depth != nodes[parent.index()].depth + 1 {
                    return Err(bad(format!("node {} has inconsistent depth", record.id)));
                }
                nodes[parent.index()].children.push(record.id);
            } else if position != 0 {
                return Err(bad(format!("node {} has no parent", record.id)));
            }
            nodes.push(Node {
                id: record.id,
                parent: record.parent,
                payload: record.payload.clone(),
                depth: record.depth,
                children: Vec::new(),
                terminal: record.terminal,
            });
            stats[position].set(RolloutStats {
                successes: record.successes,
                total: record.total,
            });
            direct[position].set(RolloutStats {
                successes: record.direct_successes,
                total: record.direct_total,
            });
        }
        Ok(Self {
            problem_id: dump.problem_id.clone(),
            nodes,
            stats,
            direct,
        })
    }
}

/// Export form of a tree: one record per node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeDump {
    pub problem_id: String,
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub depth: u32,
    pub payload: String,
    pub successes: u64,
    pub total: u64,
    #[serde(default)]
    pub terminal: bool,
    #[serde(default)]
    pub direct_successes: u64,
    #[serde(default)]
    pub direct_total: u64,
}

/// One (prefix, completion, reward) sample of a training group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagedSample {
    pub prefix: NodeId,
    pub completion: Vec<Token>,
    pub reward: bool,
}

impl StagedSample {
    pub fn new(prefix: NodeId, completion: Vec<Token>, reward: bool) -> Self {
        Self {
            prefix,
            completion,
            reward,
        }
    }

    pub fn reward_value(&self) -> f64 {
        if self.reward {
            1.0
        } else {
            0.0
        }
    }
}

/// A group of staged samples whose prefixes live in `tree`.
#[derive(Debug, Clone)]
pub struct StagedGroup<'t> {
    tree: &'t PrefixTree,
    samples: Vec<StagedSample>,
}

impl<'t> StagedGroup<'t> {
    pub fn new(tree: &'t PrefixTree, samples: Vec<StagedSample>) -> Result<Self, TreeError> {
        if samples.len() < 2 {
            return Err(TreeError::GroupTooSmall(samples.len()));
        }
        if let Some(bad) = samples.iter().find(|s| !tree.contains(s.prefix)) {
            return Err(TreeError::UnknownNode(bad.prefix));
        }
        Ok(Self { tree, samples })
    }

    pub fn tree(&self) -> &'t PrefixTree {
        self.tree
    }

    pub fn samples(&self) -> &[StagedSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.samples.iter().map(StagedSample::reward_value).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trace(steps: &[&str], reward: bool) -> TraceRecord {
        TraceRecord {
            problem_id: "Q".into(),
            steps: steps.iter().map(|s| s.to_string()).collect(),
            reward,
        }
    }

    fn figure_one() -> PrefixTree {
        PrefixTree::ingest(vec![
            trace(&["A", "B", "C", "D"], true),
            trace(&["A", "J", "K"], true),
            trace(&["E", "F", "G"], false),
            trace(&["H", "I"], true),
            trace(&["H", "L"], false),
        ])
        .unwrap()
    }

    #[test]
    fn single_trace_ancestors_inherit_outcome() {
        let tree = PrefixTree::ingest(vec![trace(&["A", "B"], true)]).unwrap();
        assert_eq!(tree.len(), 3);
        let qa = tree.find_path(&["A"]).unwrap();
        assert_eq!(tree.stats(qa).unwrap(), RolloutStats { successes: 1, total: 1 });
        assert_eq!(tree.render(tree.find_path(&["A", "B"]).unwrap()).unwrap(), "Q\n\nA\n\nB");
    }

    #[test]
    fn figure_one_shape() {
        let tree = figure_one();
        assert_eq!(tree.len(), 13);
        assert_eq!(tree.stats(NodeId::ROOT).unwrap().total, 5);
        assert_eq!(tree.max_depth(), 4);
        for node in tree.nodes() {
            if let Some(p) = node.parent {
                assert_eq!(node.depth, tree.depth(p).unwrap() + 1);
            }
        }
    }

    #[test]
    fn shared_prefixes_are_merged() {
        let tree = PrefixTree::ingest(vec![trace(&["A", "B", "C"], true), trace(&["A", "B", "D"], false)]).unwrap();
        assert_eq!(tree.len(), 5);
        let qab = tree.find_path(&["A", "B"]).unwrap();
        assert_eq!(tree.stats(qab).unwrap(), RolloutStats { successes: 1, total: 2 });
    }

    #[test]
    fn ingest_errors_name_the_record() {
        let err = PrefixTree::ingest(vec![trace(&["A"], true), trace(&["A"], false)]).unwrap_err();
        assert!(matches!(err, TreeError::Ingest { index: 1, .. }), "{err}");
        let err = PrefixTree::ingest(vec![trace(&["A"], true), trace(&[], false)]).unwrap_err();
        assert!(matches!(err, TreeError::Ingest { index: 1, .. }));
        let mut other = trace(&["B"], true);
        other.problem_id = "R".into();
        let err = PrefixTree::ingest(vec![trace(&["A"], true), other]).unwrap_err();
        assert!(matches!(err, TreeError::Ingest { index: 1, .. }));
        assert_eq!(PrefixTree::ingest(Vec::new()).unwrap_err(), TreeError::NoRecords);
    }

    #[test]
    fn jsonl_ingest_rejects_bad_rewards() {
        let text = "{\"problem_id\":\"Q\",\"steps\":[\"A\"],\"reward\":1}\n\n{\"problem_id\":\"Q\",\"steps\":[\"B\"],\"reward\":2}\n";
        let err = PrefixTree::ingest_jsonl(text.as_bytes()).unwrap_err();
        assert!(matches!(err, TreeError::Ingest { index: 2, .. }), "{err}");
        let ok = "{\"problem_id\":\"Q\",\"steps\":[\"A\"],\"reward\":1}\n";
        assert_eq!(PrefixTree::ingest_jsonl(ok.as_bytes()).unwrap().len(), 2);
    }

    #[test]
    fn prefix_and_sibling_predicates() {
        let tree = figure_one();
        let id = |p: &[&str]| tree.find_path(p).unwrap();
        assert!(tree.is_prefix(id(&["A"]), id(&["A", "B"])).unwrap());
        assert!(tree.is_prefix(NodeId::ROOT, id(&["A", "B"])).unwrap());
        assert!(!tree.is_prefix(id(&["A"]), id(&["A"])).unwrap());
        assert!(!tree.is_prefix(id(&["A", "B"]), id(&["E"])).unwrap());
        assert!(!tree.is_prefix(id(&["A", "B"]), id(&["A"])).unwrap());
        assert!(tree.is_sibling(id(&["A"]), id(&["E"])).unwrap());
        assert!(tree.is_sibling(id(&["A", "B"]), id(&["A", "J"])).unwrap());
        assert!(!tree.is_sibling(NodeId::ROOT, id(&["A"])).unwrap());
        assert!(!tree.is_sibling(id(&["A", "B"]), id(&["E", "F"])).unwrap());
        assert_eq!(tree.is_sibling(id(&["A"]), id(&["A"])), Err(TreeError::SameNode(id(&["A"]))));
        assert_eq!(tree.is_prefix(NodeId(99), NodeId::ROOT), Err(TreeError::UnknownNode(NodeId(99))));
    }

    #[test]
    fn record_rollout_propagates_to_ancestors_only() {
        let mut tree = PrefixTree::new("Q");
        let qab = tree.insert_path(&["A", "B"]);
        let qabc = tree.insert_path(&["A", "B", "C"]);
        let qa = tree.find_path(&["A"]).unwrap();
        let s = tree.record_rollout(qab, true).unwrap();
        assert_eq!(s, RolloutStats { successes: 1, total: 1 });
        assert_eq!(tree.stats(qa).unwrap(), RolloutStats { successes: 1, total: 1 });
        assert_eq!(tree.stats(NodeId::ROOT).unwrap(), RolloutStats { successes: 1, total: 1 });
        assert_eq!(tree.stats(qabc).unwrap(), RolloutStats::default());
        tree.record_rollout(qabc, false).unwrap();
        assert_eq!(tree.stats(qab).unwrap(), RolloutStats { successes: 1, total: 2 });
        assert_eq!(tree.direct_stats(qab).unwrap(), RolloutStats { successes: 1, total: 1 });
        assert!(!tree.has_direct_success(qabc).unwrap());
        assert!(tree.record_rollout(NodeId(42), true).is_err());
    }

    #[test]
    fn successful_continuation_reads_subtree_counts() {
        let mut tree = PrefixTree::new("Q");
        let fresh = tree.insert_path(&["Z"]);
        let node = tree.insert_path(&["A"]);
        assert!(!tree.has_successful_continuation(fresh).unwrap());
        tree.record_rollout(node, false).unwrap();
        assert!(!tree.has_successful_continuation(node).unwrap());
        tree.record_rollout(node, true).unwrap();
        assert!(tree.has_successful_continuation(node).unwrap());
        assert_eq!(tree.stats(node).unwrap(), RolloutStats { successes: 1, total: 2 });
    }

    #[test]
    fn sampling_boundaries() {
        let tree = PrefixTree::new("Q");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(tree.sample_prefixes(3, &mut rng).unwrap(), vec![NodeId::ROOT; 3]);
        assert_eq!(tree.sample_prefixes(0, &mut rng), Err(TreeError::ZeroSamples));
        let figure = figure_one();
        let drawn = figure.sample_prefixes(500, &mut rng).unwrap();
        assert!(drawn.iter().all(|id| !figure.nodes()[id.index()].terminal));
    }

    #[test]
    fn dump_round_trips_counts() {
        let tree = figure_one();
        let dump = tree.to_dump();
        let json = serde_json::to_string(&dump).unwrap();
        let back = PrefixTree::from_dump(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.to_dump(), dump);

        let mut broken = dump.clone();
        broken.nodes[3].successes = broken.nodes[3].total + 1;
        assert!(PrefixTree::from_dump(&broken).is_err());
        let mut broken = dump;
        broken.nodes[2].depth += 1;
        assert!(PrefixTree::from_dump(&broken).is_err());
    }

    #[test]
    fn concurrent_records_linearize() {
        let mut tree = PrefixTree::new("Q");
        let leaf = tree.insert_path(&["A", "B"]);
        std::thread::scope(|scope| {
            for worker in 0..8 {
                let tree = &tree;
                scope.spawn(move || {
                    for i in 0..1000 {
                        tree.record_rollout(leaf, (i + worker) % 2 == 0).unwrap();
                    }
                });
            }
        });
        assert_eq!(tree.stats(NodeId::ROOT).unwrap(), RolloutStats { successes: 4000, total: 8000 });
        assert_eq!(tree.stats(leaf).unwrap(), RolloutStats { successes: 4000, total: 8000 });
    }

    #[test]
    fn group_validation() {
        let tree = PrefixTree::new("Q");
        let one = vec![StagedSample::new(NodeId::ROOT, vec![], true)];
        assert_eq!(StagedGroup::new(&tree, one).unwrap_err(), TreeError::GroupTooSmall(1));
        let unknown = vec![
            StagedSample::new(NodeId::ROOT, vec![], true),
            StagedSample::new(NodeId(7), vec![], false),
        ];
        assert_eq!(StagedGroup::new(&tree, unknown).unwrap_err(), TreeError::UnknownNode(NodeId(7)));
    }
}
