//! Rejection-sampling self-training loop.
//!
//! Each iteration samples fresh problems round-robin over the training tiers,
//! asks the agent for a solution at training temperature, and admits a
//! trace to the [`ReplayBuffer`] only when the verifier accepts it. The
//! buffer accumulates across iterations; the batch handed to the trainer is
//! the whole buffer, or only the current iteration's traces under the
//! `no_buffer` ablation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::gateway::{Agent, AgentError, AgentRequest, RequestMeta, SkillSchedule, TrainReply};
use crate::generator::{default_tiers, TierSpec};
use crate::model::Schedule;
use crate::seed;
use crate::solver::DEFAULT_NODE_BUDGET;
use crate::text::{self, render_prompt, ParseError, PromptStyle, TraceRecord};
use crate::verify::{verify, Correctness};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Train each iteration only on that iteration's correct traces.
    pub no_buffer: bool,
    /// Drop the step-by-step instruction from training and evaluation prompts.
    pub no_cot: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub iterations: u32,
    pub rollouts_per_iteration: u32,
    pub temperature: f64,
    pub seeds: Vec<u64>,
    pub training_tiers: Vec<u8>,
    pub holdout_tiers: Vec<u8>,
    pub correctness: Correctness,
    pub ablations: Ablations,
    pub dedup: bool,
    /// Draw each tier's problems from a fixed pool of this many instances
    /// instead of generating fresh ones every iteration.
    pub fixed_pool: Option<u32>,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    pub node_budget: u64,
    pub tiers: Vec<TierSpec>,
    pub eval: crate::eval::EvalSettings,
    /// Skill ramp of the `mock:noisy` agent.
    pub skills: SkillSchedule,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            iterations: 6,
            rollouts_per_iteration: 84,
            temperature: 0.8,
            seeds: vec![42, 123, 456],
            training_tiers: vec![0, 1, 2, 3, 4],
            holdout_tiers: vec![5],
            correctness: Correctness::Feasible,
            ablations: Ablations::default(),
            dedup: false,
            fixed_pool: None,
            max_tokens: 1024,
            timeout_ms: 120_000,
            node_budget: DEFAULT_NODE_BUDGET,
            tiers: default_tiers(),
            eval: crate::eval::EvalSettings::default(),
            skills: SkillSchedule::ramping(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("tier {0} is both a training and a holdout tier")]
    Overlap(u8),
    #[error("tier {0} has no tier spec")]
    UnknownTier(u8),
    #[error("no seeds configured")]
    NoSeeds,
    #[error("no training tiers configured")]
    NoTrainingTiers,
    #[error("invalid tier spec: {0}")]
    Spec(#[from] crate::generator::SpecError),
    #[error("invalid skill schedule: {0}")]
    Skills(String),
    #[error("invalid evaluation settings: {0}")]
    Eval(String),
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.iterations == 0 {
            return Err(ConfigError::NotPositive("iterations"));
        }
        if self.rollouts_per_iteration == 0 {
            return Err(ConfigError::NotPositive("rollouts_per_iteration"));
        }
        if self.max_tokens == 0 {
            return Err(ConfigError::NotPositive("max_tokens"));
        }
        if self.node_budget == 0 {
            return Err(ConfigError::NotPositive("node_budget"));
        }
        if self.fixed_pool == Some(0) {
            return Err(ConfigError::NotPositive("fixed_pool"));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::NoSeeds);
        }
        if self.training_tiers.is_empty() {
            return Err(ConfigError::NoTrainingTiers);
        }
        for spec in &self.tiers {
            spec.validate()?;
        }
        let holdout: BTreeSet<u8> = self.holdout_tiers.iter().copied().collect();
        for &t in self.training_tiers.iter().chain(&self.holdout_tiers) {
            if !self.tiers.iter().any(|s| s.tier == t) {
                return Err(ConfigError::UnknownTier(t));
            }
        }
        if let Some(&t) = self.training_tiers.iter().find(|t| holdout.contains(t)) {
            return Err(ConfigError::Overlap(t));
        }
        self.skills.validate().map_err(ConfigError::Skills)?;
        self.eval.validate().map_err(ConfigError::Eval)?;
        Ok(())
    }

    /// Training tiers followed by holdout tiers, without duplicates.
    pub fn all_tiers(&self) -> Vec<u8> {
        let mut seen = BTreeSet::new();
        self.training_tiers.iter().chain(&self.holdout_tiers).copied().filter(|t| seen.insert(*t)).collect()
    }

    pub fn total_rollouts(&self) -> u64 {
        self.iterations as u64 * self.rollouts_per_iteration as u64
    }

    pub fn prompt_style(&self) -> PromptStyle {
        PromptStyle { chain_of_thought: !self.ablations.no_cot, ..PromptStyle::default() }
    }

    pub fn catalog(&self) -> Catalog {
        Catalog::new(self.tiers.clone(), self.node_budget)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub instance_id: String,
    pub tier: u8,
    pub iteration_admitted: u32,
    pub prompt: String,
    pub completion: String,
    pub schedule: Schedule,
}

impl TrainingTrace {
    pub fn record(&self) -> TraceRecord {
        TraceRecord {
            prompt: self.prompt.clone(),
            completion: self.completion.clone(),
            tier: self.tier,
            iteration: self.iteration_admitted,
            instance_id: self.instance_id.clone(),
        }
    }
}

/// Append-only store of verified-correct traces.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    traces: Vec<TrainingTrace>,
    per_tier_counts: BTreeMap<u8, usize>,
    first_correct: BTreeMap<u8, u32>,
}

impl ReplayBuffer {
    /// An empty buffer that reports zero counts for `tiers`.
    pub fn for_tiers(tiers: &[u8]) -> Self {
        ReplayBuffer { per_tier_counts: tiers.iter().map(|&t| (t, 0)).collect(), ..Self::default() }
    }

    pub fn admit(&mut self, trace: TrainingTrace) {
        *self.per_tier_counts.entry(trace.tier).or_default() += 1;
        let first = self.first_correct.entry(trace.tier).or_insert(trace.iteration_admitted);
        *first = (*first).min(trace.iteration_admitted);
        self.traces.push(trace);
    }

    pub fn traces(&self) -> &[TrainingTrace] {
        &self.traces
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn composition(&self) -> BTreeMap<u8, usize> {
        self.per_tier_counts.clone()
    }

    pub fn first_correct(&self) -> &BTreeMap<u8, u32> {
        &self.first_correct
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RolloutOutcome {
    Correct,
    /// Parsed but rejected; `violations` is 0 for a feasible schedule that
    /// missed the optimum in optimal-required mode.
    Incorrect {
        violations: usize,
    },
    ParseFailed {
        error: ParseError,
    },
    AgentFailed {
        error: AgentError,
    },
    GenerationFailed {
        detail: String,
    },
}

/// One line of the admission log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub iteration: u32,
    pub rollout: u32,
    pub tier: u8,
    pub instance_id: String,
    pub instance_seed: u64,
    pub request_seed: u64,
    pub admitted: bool,
    #[serde(flatten)]
    pub outcome: RolloutOutcome,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub transport: usize,
    pub timeout: usize,
    pub protocol: usize,
    pub remote: usize,
    pub parse: usize,
    pub generation: usize,
}

impl ErrorCounts {
    fn count(&mut self, outcome: &RolloutOutcome) {
        match outcome {
            RolloutOutcome::AgentFailed { error } => match error {
                AgentError::Transport(_) => self.transport += 1,
                AgentError::Timeout(_) => self.timeout += 1,
                AgentError::Protocol(_) | AgentError::MissingMetadata => self.protocol += 1,
                AgentError::Remote(_) => self.remote += 1,
            },
            RolloutOutcome::ParseFailed { .. } => self.parse += 1,
            RolloutOutcome::GenerationFailed { .. } => self.generation += 1,
            RolloutOutcome::Correct | RolloutOutcome::Incorrect { .. } => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum TrainerStatus {
    Ack,
    Unsupported,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u32,
    pub rollouts_attempted: usize,
    pub rollouts_correct: usize,
    pub hit_rate: f64,
    /// Attempts and successes per tier this iteration.
    pub tier_attempts: BTreeMap<u8, usize>,
    pub tier_correct: BTreeMap<u8, usize>,
    /// Buffer counts per tier at the end of the iteration.
    pub buffer_composition: BTreeMap<u8, usize>,
    pub errors: ErrorCounts,
    pub batch_records: usize,
    pub trainer: TrainerStatus,
}

/// Everything a rollout needs besides the agent.
pub struct LoopContext<'a> {
    pub config: &'a RunConfig,
    pub catalog: &'a Catalog,
    pub run_seed: u64,
    /// Concurrent rollouts; 1 is the sequential reference mode.
    pub parallel: usize,
}

impl LoopContext<'_> {
    fn instance_seed(&self, iteration: u32, rollout: u32) -> u64 {
        let n = self.config.training_tiers.len() as u32;
        match self.config.fixed_pool {
            None => seed::training_instance_seed(self.run_seed, iteration, rollout),
            Some(pool) => {
                let per_iter = self.config.rollouts_per_iteration.div_ceil(n);
                let slot = ((iteration - 1) * per_iter + rollout / n) % pool;
                seed::training_instance_seed(self.run_seed, 0, slot * n + rollout % n)
            }
        }
    }
}

struct RolloutResult {
    record: RolloutRecord,
    trace: Option<TrainingTrace>,
}

fn rollout(ctx: &LoopContext<'_>, agent: &dyn Agent, iteration: u32, index: u32) -> RolloutResult {
    let cfg = ctx.config;
    let tier = cfg.training_tiers[index as usize % cfg.training_tiers.len()];
    let instance_seed = ctx.instance_seed(iteration, index);
    let request_seed = seed::rollout_seed(ctx.run_seed, iteration, index);
    let mut record = RolloutRecord {
        iteration,
        rollout: index,
        tier,
        instance_id: crate::generator::instance_id(tier, instance_seed),
        instance_seed,
        request_seed,
        admitted: false,
        outcome: RolloutOutcome::Correct,
    };
    let solved = match ctx.catalog.problem(tier, instance_seed) {
        Ok(s) => s,
        Err(e) => {
            record.outcome = RolloutOutcome::GenerationFailed { detail: e.to_string() };
            return RolloutResult { record, trace: None };
        }
    };
    let prompt = render_prompt(&solved.instance, &cfg.prompt_style(), &[]);
    let request = AgentRequest {
        request_id: format!("s{}-i{}-r{}", ctx.run_seed, iteration, index),
        prompt,
        temperature: cfg.temperature,
        seed: request_seed,
        max_tokens: cfg.max_tokens,
        meta: Some(RequestMeta { tier, iteration, instance_id: record.instance_id.clone() }),
    };
    let response = match agent.complete(&request) {
        Ok(r) if r.request_id == request.request_id => r,
        Ok(r) => {
            let error = AgentError::Protocol(format!("reply echoed `{}`", r.request_id));
            record.outcome = RolloutOutcome::AgentFailed { error };
            return RolloutResult { record, trace: None };
        }
        Err(error) => {
            record.outcome = RolloutOutcome::AgentFailed { error };
            return RolloutResult { record, trace: None };
        }
    };
    let schedule = match text::parse_response(&response.text) {
        Ok(s) => s,
        Err(error) => {
            record.outcome = RolloutOutcome::ParseFailed { error };
            return RolloutResult { record, trace: None };
        }
    };
    let verdict = verify(&solved.instance, &schedule, Some(solved.makespan));
    if !verdict.is_correct(cfg.correctness) {
        record.outcome = RolloutOutcome::Incorrect { violations: verdict.violations.len() };
        return RolloutResult { record, trace: None };
    }
    record.admitted = true;
    let trace = TrainingTrace {
        instance_id: record.instance_id.clone(),
        tier,
        iteration_admitted: iteration,
        prompt: request.prompt,
        completion: response.text,
        schedule,
    };
    RolloutResult { record, trace: Some(trace) }
}

fn collect_rollouts(ctx: &LoopContext<'_>, agent: &dyn Agent, iteration: u32) -> Vec<RolloutResult> {
    let n = ctx.config.rollouts_per_iteration;
    let width = ctx.parallel.max(1).min(n as usize);
    if width == 1 {
        return (0..n).map(|i| rollout(ctx, agent, iteration, i)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RolloutResult>>> = Mutex::new((0..n).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..width {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n as usize {
                    break;
                }
                let r = rollout(ctx, agent, iteration, i as u32);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every rollout ran")).collect()
}

/// Runs one iteration's rollouts and admits correct traces in rollout-index
/// order, whatever the execution width. Trainer fields of the returned
/// metrics are left for the caller.
pub fn run_iteration(
    ctx: &LoopContext<'_>,
    iteration: u32,
    agent: &dyn Agent,
    buffer: &mut ReplayBuffer,
) -> (IterationMetrics, Vec<RolloutRecord>) {
    let results = collect_rollouts(ctx, agent, iteration);
    let mut errors = ErrorCounts::default();
    let mut tier_attempts: BTreeMap<u8, usize> = ctx.config.training_tiers.iter().map(|&t| (t, 0)).collect();
    let mut tier_correct = tier_attempts.clone();
    let mut correct = 0;
    let mut log = Vec::with_capacity(results.len());
    for r in results {
        errors.count(&r.record.outcome);
        *tier_attempts.entry(r.record.tier).or_default() += 1;
        if let Some(trace) = r.trace {
            correct += 1;
            *tier_correct.entry(r.record.tier).or_default() += 1;
            buffer.admit(trace);
        }
        log.push(r.record);
    }
    let attempted = log.len();
    let metrics = IterationMetrics {
        iteration,
        rollouts_attempted: attempted,
        rollouts_correct: correct,
        hit_rate: if attempted == 0 { 0.0 } else { correct as f64 / attempted as f64 },
        tier_attempts,
        tier_correct,
        buffer_composition: buffer.composition(),
        errors,
        batch_records: 0,
        trainer: TrainerStatus::Unsupported,
    };
    (metrics, log)
}

/// Traces handed to the trainer after `iteration`.
pub fn training_batch(config: &RunConfig, buffer: &ReplayBuffer, iteration: u32) -> Vec<TraceRecord> {
    let mut seen = HashSet::new();
    buffer
        .traces()
        .iter()
        .filter(|t| !config.ablations.no_buffer || t.iteration_admitted == iteration)
        .filter(|t| !config.dedup || seen.insert((t.instance_id.as_str(), t.completion.as_str())))
        .map(TrainingTrace::record)
        .collect()
}

pub fn trace_file(dir: &Path, iteration: u32) -> PathBuf {
    dir.join(format!("iter-{iteration}.jsonl"))
}

/// Writes the training batch for `iteration` into `dir`.
pub fn emit_training_batch(
    config: &RunConfig,
    buffer: &ReplayBuffer,
    iteration: u32,
    dir: &Path,
) -> io::Result<(PathBuf, usize)> {
    let batch = training_batch(config, buffer, iteration);
    fs::create_dir_all(dir)?;
    let path = trace_file(dir, iteration);
    fs::write(&path, text::traces_to_string(&batch))?;
    Ok((path, batch.len()))
}

pub fn notify_trainer(agent: &dyn Agent, traces: &Path) -> TrainerStatus {
    match agent.train(traces) {
        Ok(TrainReply::Ack) => TrainerStatus::Ack,
        Ok(TrainReply::Unsupported) => TrainerStatus::Unsupported,
        Err(e) => TrainerStatus::Failed(e.to_string()),
    }
}
