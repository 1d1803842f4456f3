//! Ordering constraints between the samples of a staged group.
//!
//! Two families are extracted:
//!
//! * containment pairs: a failing sample whose prefix is an ancestor of a
//!   succeeding sample's prefix must get the smaller advantage;
//! * sibling triplets: of two failing sibling prefixes with no success of
//!   their own, the one that is an ancestor of a proven prefix gets the
//!   smaller advantage, so the less proven branch is pushed up.
//!
//! A pair `(lower, upper, margin)` reads `a[lower] + margin <= a[upper]`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace_store::{StagedGroup, TreeError};

/// Slack used when counting satisfied constraints.
pub const SATISFACTION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Pair,
    Triplet,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Pair => "pair",
            Origin::Triplet => "triplet",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderingPair {
    pub lower: usize,
    pub upper: usize,
    pub margin: f64,
    pub origin: Origin,
}

impl OrderingPair {
    pub fn new(lower: usize, upper: usize, margin: f64, origin: Origin) -> Self {
        Self {
            lower,
            upper,
            margin,
            origin,
        }
    }

    /// Amount by which `a` violates this pair (0 when satisfied).
    pub fn violation(&self, a: &[f64]) -> f64 {
        (a[self.lower] + self.margin - a[self.upper]).max(0.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("ordering constraints contain a cycle through samples {0:?}")]
    Cycle(Vec<usize>),
    #[error("pair ({lower} -> {upper}) is out of range for a group of {n}")]
    OutOfRange { lower: usize, upper: usize, n: usize },
    #[error("pair ({0} -> {0}) orders a sample against itself")]
    SelfLoop(usize),
    #[error("margin {0} must be finite and non-negative")]
    BadMargin(f64),
    #[error("advantage vector has length {got}, constraint set expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// A validated list of ordering pairs over `n` samples.
///
/// Cycles are allowed at this level so that penalty solvers can still run on
/// contradictory sets; [`assemble`] and the exact solvers reject them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    n: usize,
    pairs: Vec<OrderingPair>,
}

impl ConstraintSet {
    pub fn new(n: usize, pairs: Vec<OrderingPair>) -> Result<Self, ConstraintError> {
        for p in &pairs {
            if p.lower >= n || p.upper >= n {
                return Err(ConstraintError::OutOfRange {
                    lower: p.lower,
                    upper: p.upper,
                    n,
                });
            }
            if p.lower == p.upper {
                return Err(ConstraintError::SelfLoop(p.lower));
            }
            if !(p.margin.is_finite() && p.margin >= 0.0) {
                return Err(ConstraintError::BadMargin(p.margin));
            }
        }
        Ok(Self { n, pairs })
    }

    pub fn empty(n: usize) -> Self {
        Self { n, pairs: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pairs(&self) -> &[OrderingPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Same pairs with every margin replaced.
    pub fn with_margin(&self, margin: f64) -> Result<Self, ConstraintError> {
        Self::new(
            self.n,
            self.pairs
                .iter()
                .map(|p| OrderingPair { margin, ..*p })
                .collect(),
        )
    }

    pub fn max_margin(&self) -> f64 {
        self.pairs.iter().map(|p| p.margin).fold(0.0, f64::max)
    }

    /// One directed cycle of the `lower -> upper` graph, if any.
    pub fn find_cycle(&self) -> Option<Vec<usize>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        let adjacency = self.adjacency();
        let mut mark = vec![Mark::New; self.n];
        let mut stack: Vec<usize> = Vec::new();
        for start in 0..self.n {
            if mark[start] != Mark::New {
                continue;
            }
            // Iterative DFS keeping (vertex, next edge index).
            let mut frames = vec![(start, 0usize)];
            mark[start] = Mark::Active;
            stack.push(start);
            while let Some(&mut (v, ref mut edge)) = frames.last_mut() {
                if let Some(&w) = adjacency[v].get(*edge) {
                    *edge += 1;
                    match mark[w] {
                        Mark::New => {
                            mark[w] = Mark::Active;
                            stack.push(w);
                            frames.push((w, 0));
                        }
                        Mark::Active => {
                            let from = stack.iter().position(|&x| x == w).expect("active vertex is on the stack");
                            return Some(stack[from..].to_vec());
                        }
                        Mark::Done => {}
                    }
                } else {
                    mark[v] = Mark::Done;
                    stack.pop();
                    frames.pop();
                }
            }
        }
        None
    }

    pub fn is_acyclic(&self) -> bool {
        self.find_cycle().is_none()
    }

    pub fn ensure_acyclic(&self) -> Result<(), ConstraintError> {
        match self.find_cycle() {
            Some(cycle) => Err(ConstraintError::Cycle(cycle)),
            None => Ok(()),
        }
    }

    /// Longest-path level of every sample in the constraint DAG: sources sit
    /// at level 0 and every pair satisfies `level[upper] >= level[lower] + 1`.
    pub fn levels(&self) -> Result<Vec<usize>, ConstraintError> {
        self.ensure_acyclic()?;
        let adjacency = self.adjacency();
        let mut indegree = vec![0usize; self.n];
        for p in &self.pairs {
            indegree[p.upper] += 1;
        }
        let mut level = vec![0usize; self.n];
        let mut queue: Vec<usize> = (0..self.n).filter(|&v| indegree[v] == 0).collect();
        while let Some(v) = queue.pop() {
            for &w in &adjacency[v] {
                level[w] = level[w].max(level[v] + 1);
                indegree[w] -= 1;
                if indegree[w] == 0 {
                    queue.push(w);
                }
            }
        }
        Ok(level)
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adjacency = vec![Vec::new(); self.n];
        for p in &self.pairs {
            adjacency[p.lower].push(p.upper);
        }
        adjacency
    }

    /// Largest `a[lower] + margin - a[upper]` over all pairs, floored at 0.
    pub fn max_violation(&self, a: &[f64]) -> f64 {
        self.pairs.iter().map(|p| p.violation(a)).fold(0.0, f64::max)
    }
}

/// Containment pairs: `p_i` strict prefix of `p_j`, `r_i = 0`, `r_j = 1`.
pub fn build_pair_constraints(group: &StagedGroup<'_>, margin: f64) -> Result<Vec<OrderingPair>, ConstraintError> {
    let tree = group.tree();
    let samples = group.samples();
    let mut out = Vec::new();
    for (i, si) in samples.iter().enumerate() {
        if si.reward {
            continue;
        }
        for (j, sj) in samples.iter().enumerate() {
            if i != j && sj.reward && tree.is_prefix(si.prefix, sj.prefix)? {
                out.push(OrderingPair::new(i, j, margin, Origin::Pair));
            }
        }
    }
    Ok(out)
}

/// Sibling pairs: for samples `i`, `j` on sibling prefixes, both failing and
/// neither with a direct success, emit `i -> j` whenever some sample `k` has
/// a prefix below `p_i` with a direct success.
pub fn build_triplet_constraints(group: &StagedGroup<'_>, margin: f64) -> Result<Vec<OrderingPair>, ConstraintError> {
    let tree = group.tree();
    let samples = group.samples();
    let mut out = Vec::new();
    for (i, si) in samples.iter().enumerate() {
        if si.reward || tree.has_direct_success(si.prefix)? {
            continue;
        }
        let proven_below = samples.iter().try_fold(false, |found, sk| {
            if found {
                return Ok::<bool, TreeError>(true);
            }
            Ok(tree.is_prefix(si.prefix, sk.prefix)? && tree.has_direct_success(sk.prefix)?)
        })?;
        if !proven_below {
            continue;
        }
        for (j, sj) in samples.iter().enumerate() {
            if i == j || sj.reward || si.prefix == sj.prefix {
                continue;
            }
            if tree.is_sibling(si.prefix, sj.prefix)? && !tree.has_direct_success(sj.prefix)? {
                out.push(OrderingPair::new(i, j, margin, Origin::Triplet));
            }
        }
    }
    Ok(out)
}

/// Both families merged; a `(lower, upper)` pair produced twice keeps the
/// larger margin. Fails with the offending cycle when the result is not a DAG.
pub fn assemble(group: &StagedGroup<'_>, margin_pair: f64, margin_triplet: f64) -> Result<ConstraintSet, ConstraintError> {
    let set = assemble_unchecked(group, margin_pair, margin_triplet)?;
    set.ensure_acyclic()?;
    Ok(set)
}

/// Like [`assemble`] but keeps cyclic sets, for the penalty solver.
pub fn assemble_unchecked(
    group: &StagedGroup<'_>,
    margin_pair: f64,
    margin_triplet: f64,
) -> Result<ConstraintSet, ConstraintError> {
    for m in [margin_pair, margin_triplet] {
        if !(m.is_finite() && m >= 0.0) {
            return Err(ConstraintError::BadMargin(m));
        }
    }
    let mut merged: BTreeMap<(usize, usize), OrderingPair> = BTreeMap::new();
    let all = build_pair_constraints(group, margin_pair)?
        .into_iter()
        .chain(build_triplet_constraints(group, margin_triplet)?);
    for pair in all {
        merged
            .entry((pair.lower, pair.upper))
            .and_modify(|kept| {
                if pair.margin > kept.margin {
                    *kept = pair;
                }
            })
            .or_insert(pair);
    }
    ConstraintSet::new(group.len(), merged.into_values().collect())
}

/// Fraction of pairs with `a[lower] + margin <= a[upper] + 1e-9`; 1 for an
/// empty set.
pub fn satisfaction_rate(a: &[f64], cs: &ConstraintSet) -> Result<f64, ConstraintError> {
    if a.len() != cs.n() {
        return Err(ConstraintError::Dimension {
            expected: cs.n(),
            got: a.len(),
        });
    }
    if cs.is_empty() {
        return Ok(1.0);
    }
    let satisfied = cs
        .pairs()
        .iter()
        .filter(|p| a[p.lower] + p.margin <= a[p.upper] + SATISFACTION_TOL)
        .count();
    Ok(satisfied as f64 / cs.len() as f64)
}
