//! `key = value` experiment configuration.
//!
//! One setting per line, keys carry a section prefix (`env.horizon = 5`).
//! `#` starts a comment. Unknown keys and duplicates are rejected with the
//! offending line number.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::baselines::{BaselineKind, DEFAULT_ALPHA};
use crate::env::{EnvSpec, Playout, TeacherBudget};
use crate::solver::SolverMode;
use crate::trainer::{AdvantageStructure, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }

    fn global(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "env.alphabet",
    "env.horizon",
    "env.targets",
    "env.seed",
    "env.problems",
    "teacher.rollouts",
    "teacher.max_depth",
    "teacher.max_children",
    "teacher.c_uct",
    "teacher.temperature",
    "teacher.playout",
    "teacher.seed",
    "train.steps",
    "train.group_size",
    "train.baseline",
    "train.structure",
    "train.alpha",
    "train.solver",
    "train.solver_lambda",
    "train.solver_margin",
    "train.learning_rate",
    "train.seed",
    "train.eval_every",
    "train.grad_clip",
    "train.include_own_rollouts",
    "train.refresh_period",
    "paths.out",
    "paths.traces",
];

const REQUIRED_ALWAYS: &[&str] = &["env.alphabet", "env.horizon", "env.targets", "env.seed"];

/// Raw key/value pairs with the line each came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::at(line, format!("expected key = value, got {content:?}")))?;
            let key = key.trim();
            let value = value.trim();
            if !KEYS.contains(&key) {
                return Err(ConfigError::at(line, format!("unknown key {key:?}")));
            }
            if value.is_empty() {
                return Err(ConfigError::at(line, format!("empty value for {key}")));
            }
            if let Some((first, _)) = entries.get(key) {
                return Err(ConfigError::at(line, format!("duplicate key {key} (first set on line {first})")));
            }
            entries.insert(key.to_owned(), (line, value.to_owned()));
        }
        Ok(Self { entries })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn require(&self, keys: &[&str]) -> Result<(), ConfigError> {
        for k in keys {
            if !self.entries.contains_key(*k) {
                return Err(ConfigError::global(format!("missing required key {k}")));
            }
        }
        Ok(())
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(default),
            Some((line, v)) => v
                .parse::<T>()
                .map_err(|e| ConfigError::at(*line, format!("bad value {v:?} for {key}: {e}"))),
        }
    }

    fn get_list<T: FromStr>(&self, key: &str, default: T) -> Result<Vec<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(vec![default]),
            Some((line, v)) => v
                .split(',')
                .map(|item| {
                    item.trim()
                        .parse::<T>()
                        .map_err(|e| ConfigError::at(*line, format!("bad value {item:?} for {key}: {e}")))
                })
                .collect(),
        }
    }

    fn line_of(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|(l, _)| *l)
    }
}

/// Teacher settings beyond the search budget.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherConfig {
    pub budget: TeacherBudget,
    pub temperature: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub problems: usize,
    pub teacher: TeacherConfig,
    /// Base training config; `structures` × `baselines` expand it into a sweep.
    pub train: TrainConfig,
    pub structures: Vec<AdvantageStructure>,
    pub baselines: Vec<BaselineKind>,
    pub out: PathBuf,
    pub traces: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_raw(&RawConfig::parse(text)?)
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        raw.require(REQUIRED_ALWAYS)?;
        let env = EnvSpec {
            alphabet: raw.get("env.alphabet", 5usize)?,
            horizon: raw.get("env.horizon", 5usize)?,
            targets: raw.get("env.targets", 3usize)?,
            seed: raw.get("env.seed", 0u64)?,
        };
        let problems = raw.get("env.problems", 1usize)?;
        if problems == 0 {
            return Err(ConfigError::at(raw.line_of("env.problems").unwrap_or(0), "env.problems must be at least 1"));
        }
        let defaults = TeacherBudget::default();
        let playout = match raw.get("teacher.playout", "teacher".to_string())?.as_str() {
            "teacher" => Playout::Teacher,
            "uniform" => Playout::Uniform,
            other => {
                return Err(ConfigError::at(
                    raw.line_of("teacher.playout").unwrap_or(0),
                    format!("teacher.playout must be teacher or uniform, got {other:?}"),
                ))
            }
        };
        let budget = TeacherBudget {
            rollouts: raw.get("teacher.rollouts", defaults.rollouts)?,
            max_depth: raw.get("teacher.max_depth", defaults.max_depth)?,
            max_children: raw.get("teacher.max_children", defaults.max_children)?,
            c_uct: raw.get("teacher.c_uct", defaults.c_uct)?,
            playout,
        };
        budget
            .validate()
            .map_err(|e| ConfigError::global(e.to_string()))?;
        let temperature = raw.get("teacher.temperature", 0.3f64)?;
        if !(temperature > 0.0) {
            return Err(ConfigError::at(
                raw.line_of("teacher.temperature").unwrap_or(0),
                "teacher.temperature must be positive",
            ));
        }
        let teacher = TeacherConfig {
            budget,
            temperature,
            seed: raw.get("teacher.seed", 0u64)?,
        };

        let solver_name = raw.get("train.solver", "none".to_string())?;
        let solver = match solver_name.as_str() {
            "none" => None,
            "convex" => Some(SolverMode::ConvexProjection),
            "soft" => Some(SolverMode::SoftPenalty {
                lambda: raw.get("train.solver_lambda", crate::solver::DEFAULT_SOFT_LAMBDA)?,
                margin: raw.get("train.solver_margin", crate::solver::DEFAULT_SOFT_MARGIN)?,
            }),
            "hard" => Some(SolverMode::HardMargin {
                margin: raw.get("train.solver_margin", crate::solver::DEFAULT_HARD_MARGIN)?,
            }),
            other => {
                return Err(ConfigError::at(
                    raw.line_of("train.solver").unwrap_or(0),
                    format!("train.solver must be none, convex, soft or hard, got {other:?}"),
                ))
            }
        };
        let base = TrainConfig::default();
        let grad_clip = match raw.get("train.grad_clip", "none".to_string())?.as_str() {
            "none" => None,
            v => Some(v.parse::<f64>().map_err(|e| {
                ConfigError::at(raw.line_of("train.grad_clip").unwrap_or(0), format!("bad grad_clip {v:?}: {e}"))
            })?),
        };
        let train = TrainConfig {
            group_size: raw.get("train.group_size", base.group_size)?,
            baseline: BaselineKind::Empirical,
            alpha: raw.get("train.alpha", DEFAULT_ALPHA)?,
            solver,
            structure: AdvantageStructure::Tree,
            steps: raw.get("train.steps", base.steps)?,
            seed: raw.get("train.seed", base.seed)?,
            eval_every: raw.get("train.eval_every", base.eval_every)?,
            learning_rate: raw.get("train.learning_rate", base.learning_rate)?,
            grad_clip,
            include_own_rollouts: raw.get("train.include_own_rollouts", base.include_own_rollouts)?,
            refresh_period: raw.get("train.refresh_period", base.refresh_period)?,
        };
        train.validate().map_err(|e| ConfigError::global(e.to_string()))?;
        let structures = raw.get_list("train.structure", AdvantageStructure::Tree)?;
        let baselines = raw.get_list("train.baseline", BaselineKind::Empirical)?;
        let out: PathBuf = raw.get("paths.out", "out".to_string())?.into();
        let traces = match raw.entries.get("paths.traces") {
            Some((_, v)) => PathBuf::from(v),
            None => out.join("traces.jsonl"),
        };
        Ok(Self {
            env,
            problems,
            teacher,
            train,
            structures,
            baselines,
            out,
            traces,
        })
    }

    /// Applies `--seed` and `--out` overrides.
    pub fn override_with(&mut self, seed: Option<u64>, out: Option<PathBuf>) {
        if let Some(s) = seed {
            self.train.seed = s;
            self.teacher.seed = s;
        }
        if let Some(o) = out {
            if self.traces == self.out.join("traces.jsonl") {
                self.traces = o.join("traces.jsonl");
            }
            self.out = o;
        }
    }

    /// Spec of problem `i`: the env seed is offset by the problem index.
    pub fn problem_spec(&self, i: usize) -> EnvSpec {
        EnvSpec {
            seed: self.env.seed.wrapping_add(i as u64),
            ..self.env.clone()
        }
    }

    pub fn is_sweep(&self) -> bool {
        self.structures.len() * self.baselines.len() > 1
    }
}

pub fn problem_id(i: usize) -> String {
    format!("p{i}")
}
