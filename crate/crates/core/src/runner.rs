//! Full training runs and the run directory they leave behind.
//!
//! ```text
//! <out>/config.json
//! <out>/report.json
//! <out>/tables/*.csv
//! <out>/seed-<s>/seed.json
//! <out>/seed-<s>/instances/<instance_id>.json
//! <out>/seed-<s>/traces/iter-<k>.jsonl
//! <out>/seed-<s>/metrics/iterations.jsonl
//! <out>/seed-<s>/metrics/rollouts.jsonl
//! <out>/seed-<s>/eval/<condition>.json
//! ```
//!
//! Nothing written depends on the output location, wall-clock time or the
//! execution width, so two runs with the same configuration produce
//! identical files.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::catalog::Catalog;
use crate::eval::{ConditionKind, EvalCondition, Evaluator, TierEval};
use crate::gateway::{Agent, AgentError};
use crate::report::{emit_report, write_file, ConsistencyError, RunReport, SeedReport, TierScore, WriteError};
use crate::text::to_canonical_json;
use crate::training::{
    emit_training_batch, notify_trainer, run_iteration, ConfigError, LoopContext, ReplayBuffer, RolloutRecord,
    RunConfig,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("cannot start agent for seed {seed}: {error}")]
    Agent { seed: u64, error: AgentError },
    #[error(transparent)]
    Write(#[from] WriteError),
    #[error("cannot read {path}: {detail}")]
    Read { path: PathBuf, detail: String },
    #[error("harness bookkeeping mismatch: {0}")]
    Consistency(#[from] ConsistencyError),
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items.iter().map(|i| serde_json::to_string(i).expect("serializable") + "\n").collect()
}

fn condition_file(c: &EvalCondition) -> String {
    format!("{}.json", c.to_string().replace(':', "-"))
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Everything produced for one seed.
pub struct SeedRun {
    pub report: SeedReport,
    pub log: Vec<RolloutRecord>,
    pub buffer: ReplayBuffer,
    pub evals: Vec<TierEval>,
}

struct SeedRunner<'a> {
    config: &'a RunConfig,
    catalog: &'a Catalog,
    seed: u64,
    dir: PathBuf,
    parallel: usize,
}

impl SeedRunner<'_> {
    fn evaluate(&self, agent: &dyn Agent, kind: ConditionKind, iteration: u32) -> Result<Vec<TierEval>, RunError> {
        let condition = EvalCondition::new(kind, !self.config.ablations.no_cot);
        let ev = Evaluator {
            catalog: self.catalog,
            correctness: self.config.correctness,
            temperature: self.config.eval.temperature,
            max_tokens: self.config.max_tokens,
            eval_seed: self.seed,
            iteration,
            parallel: self.parallel,
        };
        let evals = ev.eval_per_tier(agent, condition, &self.config.all_tiers(), self.config.eval.problems_per_tier);
        write_file(&self.dir.join("eval").join(condition_file(&condition)), &to_canonical_json(&evals))?;
        Ok(evals)
    }

    fn write_instances(&self, ids: &BTreeSet<String>) -> Result<(), RunError> {
        let dir = self.dir.join("instances");
        for id in ids {
            if let Some(solved) = crate::catalog::InstanceLookup::lookup(self.catalog, id) {
                write_file(&dir.join(format!("{id}.json")), &crate::text::instance_to_string(&solved.instance))?;
            }
        }
        Ok(())
    }

    fn run(&self, agent: &dyn Agent) -> Result<SeedRun, RunError> {
        let cfg = self.config;
        let mut evals = Vec::new();
        for &kind in cfg.eval.conditions.iter().filter(|k| **k != ConditionKind::PostTraining) {
            evals.extend(self.evaluate(agent, kind, 0)?);
        }
        let ctx = LoopContext { config: cfg, catalog: self.catalog, run_seed: self.seed, parallel: self.parallel };
        let mut buffer = ReplayBuffer::for_tiers(&cfg.training_tiers);
        let mut metrics = Vec::new();
        let mut log = Vec::new();
        let traces = self.dir.join("traces");
        for iteration in 1..=cfg.iterations {
            let (mut m, records) = run_iteration(&ctx, iteration, agent, &mut buffer);
            let (path, n) = emit_training_batch(cfg, &buffer, iteration, &traces)
                .map_err(|source| WriteError { path: traces.clone(), source })?;
            m.batch_records = n;
            m.trainer = notify_trainer(agent, &fs::canonicalize(&path).unwrap_or(path));
            metrics.push(m);
            log.extend(records);
        }
        if cfg.eval.conditions.contains(&ConditionKind::PostTraining) {
            evals.extend(self.evaluate(agent, ConditionKind::PostTraining, cfg.iterations)?);
        }
        let metrics_dir = self.dir.join("metrics");
        write_file(&metrics_dir.join("iterations.jsonl"), &jsonl(&metrics))?;
        write_file(&metrics_dir.join("rollouts.jsonl"), &jsonl(&log))?;
        let mut ids: BTreeSet<String> = log.iter().map(|r| r.instance_id.clone()).collect();
        ids.extend(evals.iter().flat_map(|e| e.records.iter().map(|r| r.instance_id.clone())));
        self.write_instances(&ids)?;
        let report = SeedReport {
            seed: self.seed,
            iterations: metrics,
            buffer_size: buffer.len(),
            first_correct: buffer.first_correct().clone(),
            evals: evals.iter().map(TierScore::from).collect(),
        };
        write_file(&self.dir.join("seed.json"), &to_canonical_json(&report))?;
        Ok(SeedRun { report, log, buffer, evals })
    }
}

/// Builds the agent for one seed. Mock agents answer from the seed's catalog.
pub type AgentFactory<'a> = dyn Fn(u64, Arc<Catalog>) -> Result<Box<dyn Agent>, AgentError> + 'a;

/// Runs the training loop and evaluation once per configured seed, writing
/// the run directory under `out`. `parallel` bounds concurrent requests.
pub fn run(config: &RunConfig, factory: &AgentFactory<'_>, out: &Path, parallel: usize) -> Result<RunReport, RunError> {
    run_detailed(config, factory, out, parallel).map(|(report, _)| report)
}

pub fn run_detailed(
    config: &RunConfig,
    factory: &AgentFactory<'_>,
    out: &Path,
    parallel: usize,
) -> Result<(RunReport, Vec<SeedRun>), RunError> {
    config.validate()?;
    write_file(&out.join("config.json"), &to_canonical_json(config))?;
    let mut runs = Vec::new();
    for &seed in &config.seeds {
        let catalog = Arc::new(config.catalog());
        let agent = factory(seed, catalog.clone()).map_err(|error| RunError::Agent { seed, error })?;
        let runner = SeedRunner { config, catalog: &catalog, seed, dir: seed_dir(out, seed), parallel };
        runs.push(runner.run(agent.as_ref())?);
    }
    let logs: Vec<Vec<RolloutRecord>> = runs.iter().map(|r| r.log.clone()).collect();
    let seeds = runs.iter().map(|r| r.report.clone()).collect();
    let report = RunReport::from_parts(config.clone(), seeds, &logs)?;
    emit_report(&report, out)?;
    Ok((report, runs))
}

fn read(path: &Path) -> Result<String, RunError> {
    fs::read_to_string(path).map_err(|e| RunError::Read { path: path.to_path_buf(), detail: e.to_string() })
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path, s: &str) -> Result<T, RunError> {
    serde_json::from_str(s).map_err(|e| RunError::Read { path: path.to_path_buf(), detail: e.to_string() })
}

/// Rebuilds the report of a finished run directory from its per-seed files.
pub fn load_report(out: &Path) -> Result<RunReport, RunError> {
    let cfg_path = out.join("config.json");
    let config: RunConfig = parse(&cfg_path, &read(&cfg_path)?)?;
    let mut seeds = Vec::new();
    let mut logs = Vec::new();
    for &seed in &config.seeds {
        let dir = seed_dir(out, seed);
        let path = dir.join("seed.json");
        seeds.push(parse::<SeedReport>(&path, &read(&path)?)?);
        let path = dir.join("metrics").join("rollouts.jsonl");
        let log = read(&path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| parse(&path, l))
            .collect::<Result<Vec<RolloutRecord>, _>>()?;
        logs.push(log);
    }
    Ok(RunReport::from_parts(config, seeds, &logs)?)
}

/// `load_report` followed by rewriting `report.json` and the tables.
pub fn regenerate_report(out: &Path) -> Result<RunReport, RunError> {
    let report = load_report(out)?;
    emit_report(&report, out)?;
    Ok(report)
}
