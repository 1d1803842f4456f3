//! Policy-gradient training over staged groups.
//!
//! One step samples `K` prefixes, rolls the student out from each, records
//! the outcomes in the tree, forms staged advantages, optionally refines them
//! with a solver, and takes the ascent step `θ ← θ + η·ĝ`.

mod policy;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{
    center_in_place, population_variance, staged_advantages, staged_advantages_mc, BaselineError, BaselineKind,
    DEFAULT_ALPHA,
};
use crate::constraints::{assemble_unchecked, satisfaction_rate, ConstraintError, ConstraintSet};
use crate::env::{EnvError, Environment, Token};
use crate::solver::{self, SolverError, SolverMode};
use crate::trace_store::{NodeId, PrefixTree, StagedGroup, StagedSample, TreeError};

pub use policy::{
    estimate_gradient, importance_weight, log_prob_gradient, rollout, GradientEstimate, PolicyDump, PolicyTable,
    StateLogits, WEIGHT_CLIP,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("expected {expected} values, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("teacher assigns zero probability to the completion")]
    Support,
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// How group prefixes are chosen and advantages formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvantageStructure {
    /// Uniform prefixes, advantages are group-centered rewards.
    Flat,
    /// All prefixes from the root-to-leaf path of one teacher trace.
    Trace,
    /// Uniform prefixes over the whole tree with prefix baselines.
    Tree,
}

impl fmt::Display for AdvantageStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdvantageStructure::Flat => "flat",
            AdvantageStructure::Trace => "trace",
            AdvantageStructure::Tree => "tree",
        })
    }
}

impl FromStr for AdvantageStructure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "flat" => Ok(AdvantageStructure::Flat),
            "trace" => Ok(AdvantageStructure::Trace),
            "tree" => Ok(AdvantageStructure::Tree),
            other => Err(format!("unknown advantage structure {other:?}; expected flat, trace or tree")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub group_size: usize,
    pub baseline: BaselineKind,
    pub alpha: f64,
    pub solver: Option<SolverMode>,
    pub structure: AdvantageStructure,
    pub steps: usize,
    pub seed: u64,
    /// Evaluate every this many steps; 0 disables evaluation.
    pub eval_every: usize,
    pub learning_rate: f64,
    pub grad_clip: Option<f64>,
    /// Record a step's rollouts before its baselines are read.
    pub include_own_rollouts: bool,
    /// Flush recorded rollouts into the tree every this many steps.
    pub refresh_period: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            baseline: BaselineKind::Empirical,
            alpha: DEFAULT_ALPHA,
            solver: None,
            structure: AdvantageStructure::Tree,
            steps: 100,
            seed: 0,
            eval_every: 1,
            learning_rate: 0.1,
            grad_clip: None,
            include_own_rollouts: true,
            refresh_period: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.group_size < 2 {
            return Err(TrainError::Config(format!("group_size must be at least 2, got {}", self.group_size)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(TrainError::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if self.refresh_period == 0 {
            return Err(TrainError::Config("refresh_period must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(TrainError::Config("grad_clip must be positive".into()));
            }
        }
        if let BaselineKind::MonteCarlo { rollouts: 0 } = self.baseline {
            return Err(TrainError::Baseline(BaselineError::ZeroRollouts));
        }
        Ok(())
    }
}

/// One row of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_reward: f64,
    pub adv_variance: f64,
    pub constraint_sat: f64,
    pub grad_norm: f64,
    pub eval_success: f64,
}

impl StepMetrics {
    pub const CSV_HEADER: [&'static str; 6] =
        ["step", "mean_reward", "adv_variance", "constraint_sat", "grad_norm", "eval_success"];
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<StepMetrics>,
    pub policy: PolicyTable,
    /// The training tree, carrying the statistics accumulated during the run.
    pub tree: PrefixTree,
    pub solver_calls: usize,
    pub solver_fallbacks: usize,
}

impl TrainOutcome {
    pub fn final_eval(&self) -> f64 {
        self.metrics.last().map_or(0.0, |m| m.eval_success)
    }

    /// First step whose evaluation reached `threshold`.
    pub fn steps_to(&self, threshold: f64) -> Option<usize> {
        self.metrics.iter().find(|m| m.eval_success >= threshold).map(|m| m.step)
    }
}

/// 1 if the greedy completion from the root hits a target, else 0.
pub fn greedy_success(policy: &PolicyTable, env: &Environment) -> f64 {
    let seq = policy.greedy_completion(&[], env.horizon());
    if env.terminal_reward(&seq).unwrap_or(false) {
        1.0
    } else {
        0.0
    }
}

/// Draws the group prefixes for one step.
pub fn sample_group_prefixes<R: Rng + ?Sized>(
    tree: &PrefixTree,
    structure: AdvantageStructure,
    k: usize,
    rng: &mut R,
) -> Result<Vec<NodeId>, TrainError> {
    match structure {
        AdvantageStructure::Flat | AdvantageStructure::Tree => Ok(tree.sample_prefixes(k, rng)?),
        AdvantageStructure::Trace => {
            let leaves = tree.terminal_nodes();
            if leaves.is_empty() {
                return Ok(tree.sample_prefixes(k, rng)?);
            }
            let leaf = leaves[rng.gen_range(0..leaves.len())];
            let path: Vec<NodeId> = tree
                .ancestry(leaf)?
                .into_iter()
                .filter(|&id| !tree.nodes()[id.index()].terminal)
                .collect();
            if path.is_empty() {
                return Err(TrainError::Tree(TreeError::NoEligibleNodes));
            }
            Ok((0..k).map(|_| path[rng.gen_range(0..path.len())]).collect())
        }
    }
}

/// Margin used when scoring constraint satisfaction for a solver mode.
fn scoring_margin(mode: Option<&SolverMode>) -> f64 {
    match mode {
        Some(SolverMode::SoftPenalty { margin, .. }) | Some(SolverMode::HardMargin { margin }) => *margin,
        _ => 0.0,
    }
}

struct Refined {
    values: Vec<f64>,
    fallback: bool,
}

/// Runs the configured solver on `adv`, falling back to the default soft
/// solver when the exact modes fail.
fn refine(mode: &SolverMode, adv: &[f64], cs: &ConstraintSet) -> Refined {
    match solver::solve(mode, adv, cs) {
        Ok(rep) => Refined {
            values: rep.solution.into_values(),
            fallback: false,
        },
        Err(_) => {
            let values = solver::solve(&SolverMode::soft_default(), adv, cs)
                .map(|r| r.solution.into_values())
                .unwrap_or_else(|_| adv.to_vec());
            Refined { values, fallback: true }
        }
    }
}

fn group_advantages<R: Rng + ?Sized>(
    config: &TrainConfig,
    group: &StagedGroup<'_>,
    policy: &PolicyTable,
    env: &Environment,
    rng: &mut R,
) -> Result<Vec<f64>, TrainError> {
    Ok(match config.structure {
        AdvantageStructure::Flat => {
            let mut r = group.rewards();
            center_in_place(&mut r);
            r
        }
        AdvantageStructure::Trace | AdvantageStructure::Tree => match config.baseline {
            BaselineKind::MonteCarlo { rollouts } => {
                staged_advantages_mc(group, rollouts, config.alpha, policy, env, rng)?.into_values()
            }
            kind => staged_advantages(group, kind, config.alpha)?.into_values(),
        },
    })
}

/// Trains a fresh copy of `initial` on `env`, drawing prefixes from a copy of
/// `tree`. Deterministic given the config seed.
pub fn train(
    config: &TrainConfig,
    env: &Environment,
    tree: &PrefixTree,
    initial: &PolicyTable,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let tree = tree.clone();
    let mut policy = initial.clone();
    policy.set_learning_rate(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut metrics = Vec::with_capacity(config.steps);
    let mut pending: Vec<(NodeId, bool)> = Vec::new();
    let mut eval = greedy_success(&policy, env);
    let mut solver_calls = 0;
    let mut solver_fallbacks = 0;
    let margin = scoring_margin(config.solver.as_ref());

    for step in 0..config.steps {
        let prefixes = sample_group_prefixes(&tree, config.structure, config.group_size, &mut rng)?;
        let samples = prefixes
            .iter()
            .map(|&p| rollout(&policy, env, &tree, p, &mut rng))
            .collect::<Result<Vec<StagedSample>, _>>()?;
        pending.extend(samples.iter().map(|s| (s.prefix, s.reward)));
        let flush = (step + 1) % config.refresh_period == 0;
        if config.include_own_rollouts && flush {
            for (p, r) in pending.drain(..) {
                tree.record_rollout(p, r)?;
            }
        }

        let group = StagedGroup::new(&tree, samples)?;
        let mut adv = group_advantages(config, &group, &policy, env, &mut rng)?;
        let cs = assemble_unchecked(&group, margin, margin)?;
        if let Some(mode) = &config.solver {
            solver_calls += 1;
            let refined = refine(mode, &adv, &cs);
            solver_fallbacks += usize::from(refined.fallback);
            adv = refined.values;
        }
        let constraint_sat = satisfaction_rate(&adv, &cs)?;

        let mut grad = estimate_gradient(&policy, &tree, group.samples(), &adv)?;
        if let Some(c) = config.grad_clip {
            grad.clip(c);
        }
        let grad_norm = grad.norm();
        policy.apply(&grad);

        if !config.include_own_rollouts && flush {
            for (p, r) in pending.drain(..) {
                tree.record_rollout(p, r)?;
            }
        }
        if config.eval_every > 0 && (step + 1) % config.eval_every == 0 {
            eval = greedy_success(&policy, env);
        }
        let rewards = group.rewards();
        metrics.push(StepMetrics {
            step,
            mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
            adv_variance: population_variance(&adv),
            constraint_sat,
            grad_norm,
            eval_success: eval,
        });
    }
    Ok(TrainOutcome {
        metrics,
        policy,
        tree,
        solver_calls,
        solver_fallbacks,
    })
}

/// Trace-of-covariance of `ĝ` under several advantage schemes, measured on
/// the same groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceProbe {
    pub repeats: usize,
    /// `A = r`.
    pub var_zero_baseline: f64,
    /// `A = r - mean(r)`.
    pub var_centered: f64,
    /// Staged advantages with the empirical baseline.
    pub var_ve: f64,
    /// Convex projection of the centered rewards.
    pub var_sae: f64,
    /// Groups whose centered rewards violated at least one constraint.
    pub violating_groups: usize,
    /// Of those, groups where the projection did not increase advantage variance.
    pub contract_held: usize,
}

#[derive(Default)]
struct Moments {
    sum: BTreeMap<(Vec<Token>, usize), f64>,
    sum_sq: BTreeMap<(Vec<Token>, usize), f64>,
}

impl Moments {
    fn add(&mut self, g: &GradientEstimate) {
        for (state, v) in &g.grads {
            for (a, &x) in v.iter().enumerate() {
                *self.sum.entry((state.clone(), a)).or_default() += x;
                *self.sum_sq.entry((state.clone(), a)).or_default() += x * x;
            }
        }
    }

    fn merge(mut self, other: Moments) -> Moments {
        for (k, v) in other.sum {
            *self.sum.entry(k).or_default() += v;
        }
        for (k, v) in other.sum_sq {
            *self.sum_sq.entry(k).or_default() += v;
        }
        self
    }

    /// Unbiased trace of the covariance over `n` draws.
    fn trace(&self, n: usize) -> f64 {
        if n < 2 {
            return 0.0;
        }
        let nf = n as f64;
        self.sum
            .iter()
            .map(|(k, s)| {
                let sq = self.sum_sq[k];
                ((sq - s * s / nf) / (nf - 1.0)).max(0.0)
            })
            .sum()
    }
}

#[derive(Default)]
struct ProbeAcc {
    zero: Moments,
    centered: Moments,
    ve: Moments,
    sae: Moments,
    violating: usize,
    held: usize,
}

impl ProbeAcc {
    fn merge(self, o: ProbeAcc) -> ProbeAcc {
        ProbeAcc {
            zero: self.zero.merge(o.zero),
            centered: self.centered.merge(o.centered),
            ve: self.ve.merge(o.ve),
            sae: self.sae.merge(o.sae),
            violating: self.violating + o.violating,
            held: self.held + o.held,
        }
    }
}

/// Estimates gradient variance for a fixed policy and tree snapshot over
/// `repeats` independent groups drawn with `config.structure`. Tree
/// statistics are read but never updated.
pub fn gradient_variance_probe(
    policy: &PolicyTable,
    env: &Environment,
    tree: &PrefixTree,
    config: &TrainConfig,
    repeats: usize,
) -> Result<VarianceProbe, TrainError> {
    config.validate()?;
    let mut seeder = ChaCha8Rng::seed_from_u64(config.seed);
    let seeds: Vec<u64> = (0..repeats).map(|_| seeder.gen()).collect();
    let acc = seeds
        .par_iter()
        .map(|&seed| -> Result<ProbeAcc, TrainError> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut acc = ProbeAcc::default();
            let prefixes = sample_group_prefixes(tree, config.structure, config.group_size, &mut rng)?;
            let samples = prefixes
                .iter()
                .map(|&p| rollout(policy, env, tree, p, &mut rng))
                .collect::<Result<Vec<_>, _>>()?;
            let group = StagedGroup::new(tree, samples)?;
            let r = group.rewards();
            let mut centered = r.clone();
            center_in_place(&mut centered);
            let ve = staged_advantages(&group, BaselineKind::Empirical, config.alpha)?.into_values();
            let cs = assemble_unchecked(&group, 0.0, 0.0)?;
            let sae = match solver::project_convex(&r, &cs) {
                Ok(rep) => {
                    if cs.max_violation(&centered) > 0.0 {
                        acc.violating += 1;
                        if solver::check_variance_contract(&r, &rep).holds {
                            acc.held += 1;
                        }
                    }
                    rep.solution.into_values()
                }
                Err(_) => centered.clone(),
            };
            for (m, a) in [
                (&mut acc.zero, &r),
                (&mut acc.centered, &centered),
                (&mut acc.ve, &ve),
                (&mut acc.sae, &sae),
            ] {
                m.add(&estimate_gradient(policy, tree, group.samples(), a)?);
            }
            Ok(acc)
        })
        .try_reduce(ProbeAcc::default, |a, b| Ok(a.merge(b)))?;
    Ok(VarianceProbe {
        repeats,
        var_zero_baseline: acc.zero.trace(repeats),
        var_centered: acc.centered.trace(repeats),
        var_ve: acc.ve.trace(repeats),
        var_sae: acc.sae.trace(repeats),
        violating_groups: acc.violating,
        contract_held: acc.held,
    })
}
