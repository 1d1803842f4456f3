//! Synthetic staged-reasoning environment.
//!
//! States are token prefixes, actions append one token, and an episode ends
//! exactly at the horizon with reward 1 iff the full sequence is one of the
//! problem's targets. Targets shorter than the horizon are padded with
//! [`STOP_TOKEN`].

mod mcts;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace_store::{PrefixTree, TraceRecord, TreeError};
use crate::trainer::PolicyTable;

pub use mcts::{teacher_mcts, Playout, TeacherBudget};

pub type Token = u8;

/// Padding token for targets shorter than the horizon.
pub const STOP_TOKEN: Token = 0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("prefix of length {len} already reaches the horizon {horizon}")]
    HorizonExceeded { len: usize, horizon: usize },
    #[error("sequence of length {len} is not terminal (horizon {horizon})")]
    NotTerminal { len: usize, horizon: usize },
    #[error("token {token} is outside the alphabet of size {alphabet}")]
    BadToken { token: Token, alphabet: usize },
    #[error("invalid environment: {0}")]
    Invalid(String),
    #[error("invalid teacher budget: {0}")]
    Budget(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Serializable description of a generated problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub alphabet: usize,
    pub horizon: usize,
    pub targets: usize,
    pub seed: u64,
}

impl Default for EnvSpec {
    /// The standard test environment: 5 tokens, horizon 5, 3 targets.
    fn default() -> Self {
        Self {
            alphabet: 5,
            horizon: 5,
            targets: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    alphabet: usize,
    horizon: usize,
    targets: BTreeSet<Vec<Token>>,
}

impl Environment {
    pub fn new(alphabet: usize, horizon: usize, targets: impl IntoIterator<Item = Vec<Token>>) -> Result<Self, EnvError> {
        if alphabet < 2 || alphabet > Token::MAX as usize + 1 {
            return Err(EnvError::Invalid(format!("alphabet size {alphabet} must be in 2..=256")));
        }
        if horizon == 0 {
            return Err(EnvError::Invalid("horizon must be at least 1".into()));
        }
        let mut padded = BTreeSet::new();
        for mut target in targets {
            if target.len() > horizon {
                return Err(EnvError::Invalid(format!(
                    "target {target:?} is longer than the horizon {horizon}"
                )));
            }
            if let Some(&token) = target.iter().find(|&&t| t as usize >= alphabet) {
                return Err(EnvError::BadToken { token, alphabet });
            }
            target.resize(horizon, STOP_TOKEN);
            padded.insert(target);
        }
        Ok(Self {
            alphabet,
            horizon,
            targets: padded,
        })
    }

    /// Draws `spec.targets` distinct full-length targets from a generator
    /// seeded with `spec.seed`.
    pub fn generate(spec: &EnvSpec) -> Result<Self, EnvError> {
        let space = (spec.alphabet as f64).powi(spec.horizon as i32);
        if (spec.targets as f64) > space {
            return Err(EnvError::Invalid(format!(
                "cannot draw {} distinct targets from {space} sequences",
                spec.targets
            )));
        }
        if spec.alphabet < 2 || spec.alphabet > Token::MAX as usize + 1 {
            return Err(EnvError::Invalid(format!("alphabet size {} must be in 2..=256", spec.alphabet)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut targets = BTreeSet::new();
        while targets.len() < spec.targets {
            let t: Vec<Token> = (0..spec.horizon)
                .map(|_| rng.gen_range(0..spec.alphabet) as Token)
                .collect();
            targets.insert(t);
        }
        Self::new(spec.alphabet, spec.horizon, targets)
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn targets(&self) -> &BTreeSet<Vec<Token>> {
        &self.targets
    }

    pub fn step(&self, prefix: &[Token], action: Token) -> Result<Vec<Token>, EnvError> {
        if prefix.len() >= self.horizon {
            return Err(EnvError::HorizonExceeded {
                len: prefix.len(),
                horizon: self.horizon,
            });
        }
        self.check_token(action)?;
        let mut next = Vec::with_capacity(prefix.len() + 1);
        next.extend_from_slice(prefix);
        next.push(action);
        Ok(next)
    }

    pub fn is_terminal(&self, sequence: &[Token]) -> bool {
        sequence.len() == self.horizon
    }

    pub fn terminal_reward(&self, sequence: &[Token]) -> Result<bool, EnvError> {
        if !self.is_terminal(sequence) {
            return Err(EnvError::NotTerminal {
                len: sequence.len(),
                horizon: self.horizon,
            });
        }
        Ok(self.targets.contains(sequence))
    }

    /// True iff some target starts with `prefix`.
    pub fn on_target_path(&self, prefix: &[Token]) -> bool {
        self.targets.iter().any(|t| t.starts_with(prefix))
    }

    pub fn check_token(&self, token: Token) -> Result<(), EnvError> {
        if (token as usize) < self.alphabet {
            Ok(())
        } else {
            Err(EnvError::BadToken {
                token,
                alphabet: self.alphabet,
            })
        }
    }

    /// Probability that a uniformly random policy succeeds from the root.
    pub fn uniform_success_rate(&self) -> f64 {
        self.targets.len() as f64 / (self.alphabet as f64).powi(self.horizon as i32)
    }

    /// Every token sequence of length `len`, in lexicographic order.
    pub fn sequences(&self, len: usize) -> Vec<Vec<Token>> {
        let mut out = vec![Vec::new()];
        for _ in 0..len {
            out = out
                .into_iter()
                .flat_map(|seq| {
                    (0..self.alphabet).map(move |a| {
                        let mut next = seq.clone();
                        next.push(a as Token);
                        next
                    })
                })
                .collect();
        }
        out
    }

    /// Samples a target uniformly.
    pub fn random_target<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vec<Token>> {
        let all: Vec<&Vec<Token>> = self.targets.iter().collect();
        all.choose(rng).map(|t| (*t).clone())
    }
}

/// Softmax teacher that puts logit `1 / temperature` on every action that
/// stays on some target's path and 0 elsewhere.
pub fn target_biased_teacher(env: &Environment, temperature: f64) -> PolicyTable {
    assert!(temperature > 0.0, "teacher temperature must be positive");
    teacher_with_logit(env, 1.0 / temperature)
}

/// Teacher that never leaves the target paths while it is on one.
pub fn greedy_teacher(env: &Environment) -> PolicyTable {
    let mut policy = PolicyTable::new(env.alphabet(), 1.0);
    for (state, on_path) in on_path_actions(env) {
        let logits = (0..env.alphabet())
            .map(|a| if on_path.contains(&(a as Token)) { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        policy.set_logits(state, logits);
    }
    policy
}

fn teacher_with_logit(env: &Environment, logit: f64) -> PolicyTable {
    let mut policy = PolicyTable::new(env.alphabet(), 1.0);
    for (state, on_path) in on_path_actions(env) {
        let logits = (0..env.alphabet())
            .map(|a| if on_path.contains(&(a as Token)) { logit } else { 0.0 })
            .collect();
        policy.set_logits(state, logits);
    }
    policy
}

fn on_path_actions(env: &Environment) -> Vec<(Vec<Token>, BTreeSet<Token>)> {
    let mut states: std::collections::BTreeMap<Vec<Token>, BTreeSet<Token>> = Default::default();
    for target in env.targets() {
        for depth in 0..target.len() {
            states
                .entry(target[..depth].to_vec())
                .or_default()
                .insert(target[depth]);
        }
    }
    states.into_iter().collect()
}

/// Builds the prefix tree of a set of teacher traces.
pub fn augment_prefixes(traces: &[TraceRecord]) -> Result<PrefixTree, EnvError> {
    if traces.is_empty() {
        return Err(EnvError::Tree(TreeError::NoRecords));
    }
    Ok(PrefixTree::ingest(traces.iter().cloned())?)
}

/// Payload used for a token inside trace records.
pub fn token_payload(token: Token) -> String {
    token.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_appends_and_respects_horizon() {
        let env = Environment::new(5, 3, vec![vec![0, 1, 2]]).unwrap();
        assert_eq!(env.step(&[], 2).unwrap(), vec![2]);
        assert_eq!(env.step(&[1, 3], 0).unwrap(), vec![1, 3, 0]);
        assert_eq!(env.step(&[1, 3, 0], 0), Err(EnvError::HorizonExceeded { len: 3, horizon: 3 }));
        assert!(matches!(env.step(&[], 7), Err(EnvError::BadToken { token: 7, .. })));
    }

    #[test]
    fn terminal_reward_is_target_membership() {
        let env = Environment::new(5, 3, vec![vec![0, 1, 2]]).unwrap();
        assert_eq!(env.terminal_reward(&[0, 1, 2]), Ok(true));
        assert_eq!(env.terminal_reward(&[0, 1, 0]), Ok(false));
        assert_eq!(env.terminal_reward(&[0, 1]), Err(EnvError::NotTerminal { len: 2, horizon: 3 }));
        let multi = Environment::new(3, 2, vec![vec![0, 1], vec![1, 0]]).unwrap();
        assert_eq!(multi.terminal_reward(&[1, 0]), Ok(true));
    }

    #[test]
    fn short_targets_are_padded_with_stop() {
        let env = Environment::new(4, 3, vec![vec![2]]).unwrap();
        assert!(env.targets().contains(&vec![2, STOP_TOKEN, STOP_TOKEN]));
        assert!(Environment::new(4, 2, vec![vec![1, 1, 1]]).is_err());
        assert!(Environment::new(1, 2, Vec::<Vec<Token>>::new()).is_err());
    }

    #[test]
    fn generated_targets_are_distinct_and_seeded() {
        let spec = EnvSpec::default();
        let a = Environment::generate(&spec).unwrap();
        let b = Environment::generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.targets().len(), 3);
        assert!(a.targets().iter().all(|t| t.len() == 5));
        assert!((a.uniform_success_rate() - 3.0 / 3125.0).abs() < 1e-15);
    }

    #[test]
    fn teacher_prefers_target_path() {
        let env = Environment::new(5, 2, vec![vec![3, 1]]).unwrap();
        let teacher = target_biased_teacher(&env, 0.3);
        let p = teacher.probs(&[]);
        assert!(p[3] > 0.8);
        let greedy = greedy_teacher(&env);
        assert_eq!(greedy.probs(&[3])[1], 1.0);
        assert_eq!(greedy.probs(&[3])[0], 0.0);
        // off-path states stay uniform
        assert!((greedy.probs(&[2])[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn augmenting_one_trace_yields_all_prefixes() {
        let steps: Vec<String> = "ABCDE".chars().map(|c| c.to_string()).collect();
        let tree = augment_prefixes(&[TraceRecord {
            problem_id: "p".into(),
            steps,
            reward: true,
        }])
        .unwrap();
        assert_eq!(tree.len(), 6);
        assert!(augment_prefixes(&[]).is_err());
    }
}
