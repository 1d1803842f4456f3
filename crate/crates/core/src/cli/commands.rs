//! `generate` and `train`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{problem_id, ExperimentConfig};
use super::CliError;
use crate::baselines::BaselineKind;
use crate::env::{augment_prefixes, target_biased_teacher, teacher_mcts, Environment};
use crate::trace_store::{PrefixTree, TraceRecord, TreeDump};
use crate::trainer::{self, PolicyDump, PolicyTable, StepMetrics, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerateSummary {
    pub problems: usize,
    pub traces: usize,
    pub nodes: usize,
    pub success_fraction: f64,
}

/// Runs the teacher search for every problem and writes `traces`,
/// `tree.json` (one dump per problem) and `summary.json`.
pub fn generate(cfg: &ExperimentConfig, quiet: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let per_problem = (0..cfg.problems)
        .into_par_iter()
        .map(|i| {
            let env = Environment::generate(&cfg.problem_spec(i)).map_err(CliError::run)?;
            let teacher = target_biased_teacher(&env, cfg.teacher.temperature);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.teacher.seed.wrapping_add(i as u64));
            let traces = teacher_mcts(&env, &cfg.teacher.budget, &teacher, &problem_id(i), &mut rng)
                .map_err(CliError::run)?;
            let tree = augment_prefixes(&traces).map_err(CliError::run)?;
            Ok((traces, tree.to_dump()))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    if let Some(dir) = cfg.traces.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut lines = String::new();
    let mut summary = GenerateSummary {
        problems: cfg.problems,
        traces: 0,
        nodes: 0,
        success_fraction: 0.0,
    };
    let mut successes = 0usize;
    let mut dumps: Vec<TreeDump> = Vec::with_capacity(per_problem.len());
    for (traces, dump) in per_problem {
        for t in &traces {
            lines.push_str(&t.to_json_line());
            lines.push('\n');
        }
        summary.traces += traces.len();
        successes += traces.iter().filter(|t| t.reward).count();
        summary.nodes += dump.nodes.len();
        dumps.push(dump);
    }
    summary.success_fraction = successes as f64 / summary.traces.max(1) as f64;
    write_file(&cfg.traces, lines.as_bytes())?;
    write_json(&cfg.out.join("tree.json"), &dumps)?;
    write_json(&cfg.out.join("summary.json"), &summary)?;
    if !quiet {
        writeln!(
            out,
            "problems={} traces={} nodes={} success_fraction={:.6}",
            summary.problems, summary.traces, summary.nodes, summary.success_fraction
        )
        .map_err(|e| CliError::io("<stdout>", e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub structure: String,
    pub baseline: String,
    pub metrics_file: String,
    pub steps: usize,
    /// Final greedy success averaged over problems.
    pub final_eval: f64,
    /// First step where the averaged eval reached 0.9.
    pub steps_to_0_9: Option<usize>,
    pub solver_calls: usize,
    pub solver_fallbacks: usize,
}

/// Trains every (structure, baseline) cell on every problem and writes the
/// averaged metrics, final policies and a summary.
pub fn train(cfg: &ExperimentConfig, quiet: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let trees = load_trees(cfg)?;
    let envs = (0..cfg.problems)
        .map(|i| Environment::generate(&cfg.problem_spec(i)).map_err(CliError::run))
        .collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;

    let mut runs = Vec::new();
    for &structure in &cfg.structures {
        for &baseline in &cfg.baselines {
            let outcomes = (0..cfg.problems)
                .into_par_iter()
                .map(|i| {
                    let config = TrainConfig {
                        structure,
                        baseline,
                        seed: cfg.train.seed.wrapping_add(i as u64),
                        ..cfg.train.clone()
                    };
                    let initial = PolicyTable::new(envs[i].alphabet(), config.learning_rate);
                    trainer::train(&config, &envs[i], &trees[i], &initial).map_err(CliError::run)
                })
                .collect::<Result<Vec<TrainOutcome>, CliError>>()?;
            let metrics = average_metrics(&outcomes);
            let suffix = if cfg.is_sweep() {
                format!("_{}_{}", structure, file_label(baseline))
            } else {
                String::new()
            };
            let metrics_file = format!("metrics{suffix}.csv");
            write_metrics(&cfg.out.join(&metrics_file), &metrics)?;
            write_metrics_jsonl(&cfg.out.join(format!("metrics{suffix}.jsonl")), &metrics)?;
            let policies: Vec<PolicyDump> = outcomes.iter().map(|o| o.policy.to_dump()).collect();
            write_json(&cfg.out.join(format!("policy{suffix}.json")), &policies)?;
            let run = RunSummary {
                structure: structure.to_string(),
                baseline: baseline.to_string(),
                metrics_file,
                steps: metrics.len(),
                final_eval: outcomes
                    .iter()
                    .zip(&envs)
                    .map(|(o, env)| trainer::greedy_success(&o.policy, env))
                    .sum::<f64>()
                    / outcomes.len() as f64,
                steps_to_0_9: metrics.iter().find(|m| m.eval_success >= 0.9).map(|m| m.step),
                solver_calls: outcomes.iter().map(|o| o.solver_calls).sum(),
                solver_fallbacks: outcomes.iter().map(|o| o.solver_fallbacks).sum(),
            };
            if !quiet {
                writeln!(
                    out,
                    "structure={} baseline={} steps={} final_eval={:.6} file={}",
                    run.structure, run.baseline, run.steps, run.final_eval, run.metrics_file
                )
                .map_err(|e| CliError::io("<stdout>", e))?;
            }
            runs.push(run);
        }
    }
    write_json(&cfg.out.join("summary.json"), &runs)
}

fn file_label(b: BaselineKind) -> String {
    b.to_string().replace(':', "")
}

fn load_trees(cfg: &ExperimentConfig) -> Result<Vec<PrefixTree>, CliError> {
    let file = File::open(&cfg.traces)
        .map_err(|e| CliError::MissingInput(format!("traces {}: {e}", cfg.traces.display())))?;
    let mut by_problem: BTreeMap<String, Vec<TraceRecord>> = BTreeMap::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(&cfg.traces, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(&line)
            .map_err(|e| CliError::Run(format!("{} line {}: {e}", cfg.traces.display(), index + 1)))?;
        by_problem.entry(record.problem_id.clone()).or_default().push(record);
    }
    (0..cfg.problems)
        .map(|i| {
            let id = problem_id(i);
            let records = by_problem
                .remove(&id)
                .ok_or_else(|| CliError::MissingInput(format!("no traces for problem {id} in {}", cfg.traces.display())))?;
            PrefixTree::ingest(records).map_err(CliError::run)
        })
        .collect()
}

/// Per-step mean over problems.
pub fn average_metrics(outcomes: &[TrainOutcome]) -> Vec<StepMetrics> {
    let Some(first) = outcomes.first() else {
        return Vec::new();
    };
    let k = outcomes.len() as f64;
    (0..first.metrics.len())
        .map(|s| {
            let mean = |f: fn(&StepMetrics) -> f64| outcomes.iter().map(|o| f(&o.metrics[s])).sum::<f64>() / k;
            StepMetrics {
                step: s,
                mean_reward: mean(|m| m.mean_reward),
                adv_variance: mean(|m| m.adv_variance),
                constraint_sat: mean(|m| m.constraint_sat),
                grad_norm: mean(|m| m.grad_norm),
                eval_success: mean(|m| m.eval_success),
            }
        })
        .collect()
}

/// Writes the metrics CSV; the header is present even with no rows.
pub fn write_metrics(path: &Path, metrics: &[StepMetrics]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| CliError::Run(format!("{}: {e}", path.display()));
    w.write_record(StepMetrics::CSV_HEADER).map_err(csv_err)?;
    for m in metrics {
        w.serialize(m).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// One JSON object per step.
pub fn write_metrics_jsonl(path: &Path, metrics: &[StepMetrics]) -> Result<(), CliError> {
    let mut text = String::new();
    for m in metrics {
        text.push_str(&serde_json::to_string(m).map_err(CliError::run)?);
        text.push('\n');
    }
    write_file(path, text.as_bytes())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::run)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
