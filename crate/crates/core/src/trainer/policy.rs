//! Tabular softmax policy and its score-function gradients.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::env::{Environment, Token};
use crate::trace_store::{NodeId, PrefixTree, StagedSample};

/// Importance weights are clipped to this range.
pub const WEIGHT_CLIP: (f64, f64) = (1e-6, 1e6);

/// Softmax policy with one logit vector per visited prefix state. States
/// without an entry behave as all-zero logits (uniform).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    alphabet: usize,
    learning_rate: f64,
    logits: BTreeMap<Vec<Token>, Vec<f64>>,
}

impl PolicyTable {
    pub fn new(alphabet: usize, learning_rate: f64) -> Self {
        Self {
            alphabet,
            learning_rate,
            logits: BTreeMap::new(),
        }
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, eta: f64) {
        self.learning_rate = eta;
    }

    pub fn logits(&self, state: &[Token]) -> Option<&[f64]> {
        self.logits.get(state).map(Vec::as_slice)
    }

    pub fn set_logits(&mut self, state: Vec<Token>, logits: Vec<f64>) {
        assert_eq!(logits.len(), self.alphabet, "logit vector length must equal the alphabet");
        self.logits.insert(state, logits);
    }

    pub fn states(&self) -> impl Iterator<Item = (&Vec<Token>, &Vec<f64>)> {
        self.logits.iter()
    }

    /// Softmax probabilities at `state`. Logits of `-inf` get probability 0.
    pub fn probs(&self, state: &[Token]) -> Vec<f64> {
        match self.logits.get(state) {
            None => vec![1.0 / self.alphabet as f64; self.alphabet],
            Some(l) => softmax(l),
        }
    }

    pub fn log_prob_action(&self, state: &[Token], action: Token) -> f64 {
        match self.logits.get(state) {
            None => -(self.alphabet as f64).ln(),
            Some(l) => {
                let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + l.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
                l[action as usize] - lse
            }
        }
    }

    /// `log π(completion | prefix)`.
    pub fn log_prob(&self, prefix: &[Token], completion: &[Token]) -> f64 {
        let mut state = prefix.to_vec();
        let mut total = 0.0;
        for &a in completion {
            total += self.log_prob_action(&state, a);
            state.push(a);
        }
        total
    }

    /// Inverse-CDF draw from the softmax at `state`.
    pub fn sample_action<R: Rng + ?Sized>(&self, state: &[Token], rng: &mut R) -> Token {
        let probs = self.probs(state);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for (a, &p) in probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = a;
            if u < acc {
                return a as Token;
            }
        }
        last as Token
    }

    /// Highest-probability action; ties go to the lowest token.
    pub fn greedy_action(&self, state: &[Token]) -> Token {
        let probs = self.probs(state);
        let mut best = 0;
        for a in 1..probs.len() {
            if probs[a] > probs[best] {
                best = a;
            }
        }
        best as Token
    }

    pub fn sample_completion<R: Rng + ?Sized>(&self, prefix: &[Token], horizon: usize, rng: &mut R) -> Vec<Token> {
        let mut state = prefix.to_vec();
        let mut completion = Vec::with_capacity(horizon.saturating_sub(prefix.len()));
        while state.len() < horizon {
            let a = self.sample_action(&state, rng);
            state.push(a);
            completion.push(a);
        }
        completion
    }

    pub fn greedy_completion(&self, prefix: &[Token], horizon: usize) -> Vec<Token> {
        let mut state = prefix.to_vec();
        let mut completion = Vec::new();
        while state.len() < horizon {
            let a = self.greedy_action(&state);
            state.push(a);
            completion.push(a);
        }
        completion
    }

    /// Adds `scale * g` to the logits.
    pub fn add_scaled(&mut self, g: &GradientEstimate, scale: f64) {
        for (state, grad) in &g.grads {
            let entry = self
                .logits
                .entry(state.clone())
                .or_insert_with(|| vec![0.0; self.alphabet]);
            for (l, d) in entry.iter_mut().zip(grad) {
                *l += scale * d;
            }
        }
    }

    /// Gradient ascent step `θ ← θ + η·g`.
    pub fn apply(&mut self, g: &GradientEstimate) {
        let eta = self.learning_rate;
        self.add_scaled(g, eta);
    }

    /// Shifts each state's finite logits to mean zero. The policy is unchanged.
    pub fn recenter(&mut self) {
        for l in self.logits.values_mut() {
            let finite: Vec<f64> = l.iter().cloned().filter(|x| x.is_finite()).collect();
            if finite.is_empty() {
                continue;
            }
            let mean = finite.iter().sum::<f64>() / finite.len() as f64;
            for x in l.iter_mut().filter(|x| x.is_finite()) {
                *x -= mean;
            }
        }
    }

    pub fn to_dump(&self) -> PolicyDump {
        PolicyDump {
            alphabet: self.alphabet,
            learning_rate: self.learning_rate,
            states: self
                .logits
                .iter()
                .map(|(s, l)| StateLogits {
                    state: s.clone(),
                    logits: l.clone(),
                })
                .collect(),
        }
    }

    pub fn from_dump(dump: &PolicyDump) -> Result<Self, TrainError> {
        let mut p = Self::new(dump.alphabet, dump.learning_rate);
        for s in &dump.states {
            if s.logits.len() != dump.alphabet {
                return Err(TrainError::Dimension {
                    expected: dump.alphabet,
                    got: s.logits.len(),
                });
            }
            p.logits.insert(s.state.clone(), s.logits.clone());
        }
        Ok(p)
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![1.0 / logits.len() as f64; logits.len()];
    }
    let exp: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

/// Serialized policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDump {
    pub alphabet: usize,
    pub learning_rate: f64,
    pub states: Vec<StateLogits>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateLogits {
    pub state: Vec<Token>,
    pub logits: Vec<f64>,
}

/// Sparse gradient over the logit table, keyed by state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientEstimate {
    pub grads: BTreeMap<Vec<Token>, Vec<f64>>,
    pub group_size: usize,
}

impl GradientEstimate {
    pub fn zero(group_size: usize) -> Self {
        Self {
            grads: BTreeMap::new(),
            group_size,
        }
    }

    pub fn get(&self, state: &[Token], action: Token) -> f64 {
        self.grads.get(state).map_or(0.0, |g| g[action as usize])
    }

    pub fn add_scaled(&mut self, other: &GradientEstimate, scale: f64) {
        for (state, g) in &other.grads {
            let entry = self.grads.entry(state.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (e, v) in entry.iter_mut().zip(g) {
                *e += scale * v;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.values_mut() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.grads.values().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &GradientEstimate) -> f64 {
        self.grads
            .iter()
            .filter_map(|(s, g)| other.grads.get(s).map(|h| g.iter().zip(h).map(|(a, b)| a * b).sum::<f64>()))
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().flatten().all(|v| v.is_finite())
    }

    /// Rescales so the norm is at most `max_norm`.
    pub fn clip(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
    }

    /// Dense vector over the given state list (states in order, actions inner).
    pub fn flatten(&self, states: &[Vec<Token>], alphabet: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(states.len() * alphabet);
        for s in states {
            match self.grads.get(s) {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(std::iter::repeat_n(0.0, alphabet)),
            }
        }
        out
    }
}

/// `∇θ log π(completion | prefix)`: one-hot minus softmax at every visited state.
pub fn log_prob_gradient(policy: &PolicyTable, prefix: &[Token], completion: &[Token]) -> GradientEstimate {
    let mut g = GradientEstimate::zero(1);
    let mut state = prefix.to_vec();
    for &a in completion {
        let probs = policy.probs(&state);
        let entry = g
            .grads
            .entry(state.clone())
            .or_insert_with(|| vec![0.0; policy.alphabet()]);
        for (e, p) in entry.iter_mut().zip(&probs) {
            *e -= p;
        }
        entry[a as usize] += 1.0;
        state.push(a);
    }
    g
}

/// `ĝ = (1/K) Σ A_k ∇ log π(ĉ_k | p_k)` over a group whose prefixes live in `tree`.
pub fn estimate_gradient(
    policy: &PolicyTable,
    tree: &PrefixTree,
    samples: &[StagedSample],
    advantages: &[f64],
) -> Result<GradientEstimate, TrainError> {
    if samples.len() != advantages.len() {
        return Err(TrainError::Dimension {
            expected: samples.len(),
            got: advantages.len(),
        });
    }
    let k = samples.len();
    let mut g = GradientEstimate::zero(k);
    for (s, &a) in samples.iter().zip(advantages) {
        if a == 0.0 {
            continue;
        }
        let prefix = tree.path_tokens(s.prefix)?;
        g.add_scaled(&log_prob_gradient(policy, &prefix, &s.completion), a / k as f64);
    }
    Ok(g)
}

/// Samples a completion from the prefix at `node` to the horizon.
pub fn rollout<R: Rng + ?Sized>(
    policy: &PolicyTable,
    env: &Environment,
    tree: &PrefixTree,
    node: NodeId,
    rng: &mut R,
) -> Result<StagedSample, TrainError> {
    let prefix = tree.path_tokens(node)?;
    if prefix.len() >= env.horizon() {
        return Err(TrainError::Env(crate::env::EnvError::HorizonExceeded {
            len: prefix.len(),
            horizon: env.horizon(),
        }));
    }
    let completion = policy.sample_completion(&prefix, env.horizon(), rng);
    let mut full = prefix;
    full.extend_from_slice(&completion);
    let reward = env.terminal_reward(&full)?;
    Ok(StagedSample::new(node, completion, reward))
}

/// `π_student(ĉ|p) / π_teacher(ĉ|p)`, computed in log space and clipped.
pub fn importance_weight(
    student: &PolicyTable,
    teacher: &PolicyTable,
    prefix: &[Token],
    completion: &[Token],
) -> Result<f64, TrainError> {
    let lt = teacher.log_prob(prefix, completion);
    if lt == f64::NEG_INFINITY {
        return Err(TrainError::Support);
    }
    let ls = student.log_prob(prefix, completion);
    Ok((ls - lt).exp().clamp(WEIGHT_CLIP.0, WEIGHT_CLIP.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_single_step_gradient() {
        let p = PolicyTable::new(5, 0.1);
        let g = log_prob_gradient(&p, &[], &[2]);
        let row = &g.grads[&vec![]];
        for (a, &v) in row.iter().enumerate() {
            let expect = if a == 2 { 0.8 } else { -0.2 };
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn two_step_gradient_is_sum_of_states() {
        let mut p = PolicyTable::new(3, 0.1);
        p.set_logits(vec![1], vec![0.5, -1.0, 2.0]);
        let g = log_prob_gradient(&p, &[], &[1, 0]);
        let a = log_prob_gradient(&p, &[], &[1]);
        let b = log_prob_gradient(&p, &[1], &[0]);
        let mut sum = a.clone();
        sum.add_scaled(&b, 1.0);
        assert_eq!(g.grads.len(), 2);
        for (s, v) in &sum.grads {
            for (x, y) in v.iter().zip(&g.grads[s]) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn probabilities_normalize_with_neg_infinity() {
        let mut p = PolicyTable::new(4, 0.1);
        p.set_logits(vec![], vec![f64::NEG_INFINITY, 1e3, 0.0, f64::NEG_INFINITY]);
        let probs = p.probs(&[]);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(probs[0], 0.0);
        assert_eq!(p.greedy_action(&[]), 1);
    }

    #[test]
    fn recenter_keeps_probabilities() {
        let mut p = PolicyTable::new(3, 0.1);
        p.set_logits(vec![], vec![4.0, 5.0, 9.0]);
        let before = p.probs(&[]);
        p.recenter();
        let after = p.probs(&[]);
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(p.logits(&[]).unwrap().iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn greedy_ties_pick_lowest_token() {
        let p = PolicyTable::new(4, 0.1);
        assert_eq!(p.greedy_action(&[2, 3]), 0);
    }

    #[test]
    fn importance_weights() {
        let s = PolicyTable::new(2, 0.1);
        assert_eq!(importance_weight(&s, &s, &[], &[1, 0]).unwrap(), 1.0);
        let mut t = PolicyTable::new(2, 0.1);
        t.set_logits(vec![], vec![f64::NEG_INFINITY, 0.0]);
        assert!((importance_weight(&s, &t, &[], &[1]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(importance_weight(&s, &t, &[], &[0]), Err(TrainError::Support)));
    }

    #[test]
    fn ascent_step_moves_towards_action() {
        let mut p = PolicyTable::new(3, 0.5);
        let g = log_prob_gradient(&p, &[], &[1]);
        p.apply(&g);
        assert!(p.probs(&[])[1] > 1.0 / 3.0);
        assert!(g.is_finite());
    }

    #[test]
    fn dump_round_trip() {
        let mut p = PolicyTable::new(3, 0.2);
        p.set_logits(vec![0, 2], vec![0.1, 0.2, -0.3]);
        let json = serde_json::to_string(&p.to_dump()).unwrap();
        let back = PolicyTable::from_dump(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn sampling_follows_probabilities() {
        let mut p = PolicyTable::new(2, 0.1);
        p.set_logits(vec![], vec![0.0, (3.0f64).ln()]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hits = (0..40_000).filter(|_| p.sample_action(&[], &mut rng) == 1).count();
        let freq = hits as f64 / 40_000.0;
        assert!((freq - 0.75).abs() < 3.0 * (0.75f64 * 0.25 / 40_000.0).sqrt() * 1.5);
    }
}
