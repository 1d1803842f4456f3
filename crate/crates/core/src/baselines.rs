//! Prefix-value baselines and staged advantages.
//!
//! The raw advantage of sample `i` is `r_i - α·V(p_i)`; the group's raw
//! advantages are then mean-centered, with no division by their spread.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Environment;
use crate::trace_store::{NodeId, PrefixTree, StagedGroup, TreeError};
use crate::trainer::PolicyTable;

/// Default baseline weight α.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Tolerance on the mean of a centered advantage vector.
pub const CENTER_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("empirical value of node {0} is undefined: no rollouts recorded")]
    Undefined(NodeId),
    #[error("alpha {0} must lie in [0, 1]")]
    BadAlpha(f64),
    #[error("Monte-Carlo baseline needs at least one rollout")]
    ZeroRollouts,
    #[error("Monte-Carlo baseline needs a policy and an environment")]
    NeedsRollouts,
    #[error("unknown baseline {0:?}; expected expectation, optimistic, pessimistic or mc:<m>")]
    Parse(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    Empirical,
    Optimistic,
    Pessimistic,
    MonteCarlo { rollouts: usize },
}

impl BaselineKind {
    pub fn is_heuristic(self) -> bool {
        !matches!(self, BaselineKind::MonteCarlo { .. })
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineKind::Empirical => f.write_str("expectation"),
            BaselineKind::Optimistic => f.write_str("optimistic"),
            BaselineKind::Pessimistic => f.write_str("pessimistic"),
            BaselineKind::MonteCarlo { rollouts } => write!(f, "mc:{rollouts}"),
        }
    }
}

impl FromStr for BaselineKind {
    type Err = BaselineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "expectation" | "empirical" => Ok(BaselineKind::Empirical),
            "optimistic" => Ok(BaselineKind::Optimistic),
            "pessimistic" => Ok(BaselineKind::Pessimistic),
            other => {
                let m = other
                    .strip_prefix("mc:")
                    .and_then(|m| m.parse::<usize>().ok())
                    .ok_or_else(|| BaselineError::Parse(other.to_owned()))?;
                if m == 0 {
                    return Err(BaselineError::ZeroRollouts);
                }
                Ok(BaselineKind::MonteCarlo { rollouts: m })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageVector {
    values: Vec<f64>,
    centered: bool,
}

impl AdvantageVector {
    pub fn raw(values: Vec<f64>) -> Self {
        Self { values, centered: false }
    }

    /// Subtracts the arithmetic mean.
    pub fn centered(mut values: Vec<f64>) -> Self {
        center_in_place(&mut values);
        Self { values, centered: true }
    }

    /// Wraps a vector that is already zero-mean; the flag is set only if the
    /// mean really is within tolerance.
    pub fn from_zero_mean(values: Vec<f64>) -> Self {
        let centered = mean(&values).abs() <= CENTER_TOL * (1.0 + norm_inf(&values));
        Self { values, centered }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Population variance around the mean.
    pub fn variance(&self) -> f64 {
        population_variance(&self.values)
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn center_in_place(v: &mut [f64]) {
    let m = mean(v);
    for x in v.iter_mut() {
        *x -= m;
    }
}

pub fn population_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    if v.is_empty() {
        0.0
    } else {
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
    }
}

/// `successes / total` at `p`.
pub fn value_empirical(tree: &PrefixTree, p: NodeId) -> Result<f64, BaselineError> {
    tree.stats(p)?.success_rate().ok_or(BaselineError::Undefined(p))
}

/// 1 iff some rollout at or below `p` succeeded.
pub fn value_optimistic(tree: &PrefixTree, p: NodeId) -> Result<f64, BaselineError> {
    Ok(if tree.stats(p)?.successes >= 1 { 1.0 } else { 0.0 })
}

/// 1 iff at least one rollout exists at or below `p` and none failed.
pub fn value_pessimistic(tree: &PrefixTree, p: NodeId) -> Result<f64, BaselineError> {
    let s = tree.stats(p)?;
    Ok(if s.total >= 1 && s.failures() == 0 { 1.0 } else { 0.0 })
}

/// Heuristic value with the zero-rollout fallback `V = 0`.
pub fn heuristic_value(tree: &PrefixTree, p: NodeId, kind: BaselineKind) -> Result<f64, BaselineError> {
    match kind {
        BaselineKind::Empirical => match value_empirical(tree, p) {
            Err(BaselineError::Undefined(_)) => Ok(0.0),
            other => other,
        },
        BaselineKind::Optimistic => value_optimistic(tree, p),
        BaselineKind::Pessimistic => value_pessimistic(tree, p),
        BaselineKind::MonteCarlo { .. } => Err(BaselineError::NeedsRollouts),
    }
}

/// Mean reward of `m` fresh rollouts from the prefix at `p` under `policy`.
pub fn value_monte_carlo<R: Rng + ?Sized>(
    policy: &PolicyTable,
    env: &Environment,
    tree: &PrefixTree,
    p: NodeId,
    m: usize,
    rng: &mut R,
) -> Result<f64, BaselineError> {
    let prefix = tree.path_tokens(p)?;
    value_monte_carlo_tokens(policy, env, &prefix, m, rng)
}

/// [`value_monte_carlo`] for a raw token prefix.
pub fn value_monte_carlo_tokens<R: Rng + ?Sized>(
    policy: &PolicyTable,
    env: &Environment,
    prefix: &[crate::env::Token],
    m: usize,
    rng: &mut R,
) -> Result<f64, BaselineError> {
    if m == 0 {
        return Err(BaselineError::ZeroRollouts);
    }
    let mut hits = 0usize;
    for _ in 0..m {
        let mut full = prefix.to_vec();
        full.extend(policy.sample_completion(prefix, env.horizon(), rng));
        if env.terminal_reward(&full)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / m as f64)
}

/// Raw advantages `r_i - α·v_i`, mean-centered.
pub fn center_with_baseline(rewards: &[f64], values: &[f64], alpha: f64) -> Result<AdvantageVector, BaselineError> {
    check_alpha(alpha)?;
    let raw: Vec<f64> = rewards.iter().zip(values).map(|(r, v)| r - alpha * v).collect();
    Ok(AdvantageVector::centered(raw))
}

fn check_alpha(alpha: f64) -> Result<(), BaselineError> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(BaselineError::BadAlpha(alpha))
    }
}

/// Per-sample heuristic baseline values of a group.
pub fn group_values(group: &StagedGroup<'_>, kind: BaselineKind) -> Result<Vec<f64>, BaselineError> {
    group
        .samples()
        .iter()
        .map(|s| heuristic_value(group.tree(), s.prefix, kind))
        .collect()
}

/// Uncentered `r_i - α·V(p_i)` for a heuristic baseline.
pub fn raw_advantages(group: &StagedGroup<'_>, kind: BaselineKind, alpha: f64) -> Result<Vec<f64>, BaselineError> {
    check_alpha(alpha)?;
    let values = group_values(group, kind)?;
    Ok(group
        .rewards()
        .iter()
        .zip(&values)
        .map(|(r, v)| r - alpha * v)
        .collect())
}

/// Centered staged advantages for a heuristic baseline. Monte-Carlo
/// baselines need rollouts; use [`staged_advantages_mc`].
pub fn staged_advantages(group: &StagedGroup<'_>, kind: BaselineKind, alpha: f64) -> Result<AdvantageVector, BaselineError> {
    Ok(AdvantageVector::centered(raw_advantages(group, kind, alpha)?))
}

/// Centered staged advantages with `V̂_M` estimated by `m` fresh rollouts
/// per distinct prefix in the group.
pub fn staged_advantages_mc<R: Rng + ?Sized>(
    group: &StagedGroup<'_>,
    m: usize,
    alpha: f64,
    policy: &PolicyTable,
    env: &Environment,
    rng: &mut R,
) -> Result<AdvantageVector, BaselineError> {
    check_alpha(alpha)?;
    let mut cache: std::collections::BTreeMap<NodeId, f64> = Default::default();
    let mut values = Vec::with_capacity(group.len());
    for s in group.samples() {
        let v = match cache.get(&s.prefix) {
            Some(&v) => v,
            None => {
                let v = value_monte_carlo(policy, env, group.tree(), s.prefix, m, rng)?;
                cache.insert(s.prefix, v);
                v
            }
        };
        values.push(v);
    }
    center_with_baseline(&group.rewards(), &values, alpha)
}
