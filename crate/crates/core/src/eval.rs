//! Held-out evaluation: single-shot and multi-turn conditions, per tier.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::catalog::{Catalog, Solved};
use crate::gateway::{Agent, AgentError, AgentRequest, RequestMeta};
use crate::model::Schedule;
use crate::seed;
use crate::text::{self, render_prompt, ParseError, PromptStyle, Shot};
use crate::verify::{verify, Correctness, Verdict};

pub const DEFAULT_MAX_TURNS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConditionKind {
    ZeroShot,
    KShot(u32),
    MultiTurn(u32),
    /// Single-shot, evaluated after the training loop.
    PostTraining,
}

impl ConditionKind {
    pub fn max_turns(self) -> u32 {
        match self {
            ConditionKind::MultiTurn(n) => n,
            _ => 1,
        }
    }

    pub fn shots(self) -> u32 {
        match self {
            ConditionKind::KShot(k) => k,
            _ => 0,
        }
    }
}

impl fmt::Display for ConditionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConditionKind::ZeroShot => f.write_str("zero-shot"),
            ConditionKind::KShot(k) => write!(f, "k-shot:{k}"),
            ConditionKind::MultiTurn(n) => write!(f, "multi-turn:{n}"),
            ConditionKind::PostTraining => f.write_str("post-training"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad condition `{0}` (expected zero-shot, k-shot:K, multi-turn:N or post-training)")]
pub struct ConditionError(String);

impl FromStr for ConditionKind {
    type Err = ConditionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ConditionError(s.to_string());
        let count = |v: &str, max: u32| v.parse::<u32>().ok().filter(|n| (1..=max).contains(n)).ok_or_else(bad);
        match s.split_once(':') {
            None if s == "zero-shot" => Ok(ConditionKind::ZeroShot),
            None if s == "post-training" => Ok(ConditionKind::PostTraining),
            None if s == "multi-turn" => Ok(ConditionKind::MultiTurn(DEFAULT_MAX_TURNS)),
            Some(("k-shot", k)) => Ok(ConditionKind::KShot(count(k, text::MAX_SHOTS as u32)?)),
            Some(("multi-turn", n)) => Ok(ConditionKind::MultiTurn(count(n, 100)?)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for ConditionKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ConditionKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCondition {
    pub kind: ConditionKind,
    pub chain_of_thought: bool,
}

impl EvalCondition {
    pub fn new(kind: ConditionKind, chain_of_thought: bool) -> Self {
        EvalCondition { kind, chain_of_thought }
    }
}

impl fmt::Display for EvalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind, if self.chain_of_thought { "" } else { "+no-cot" })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub problems_per_tier: u32,
    pub temperature: f64,
    /// Conditions other than `post-training` run before the first training
    /// iteration, as baselines.
    pub conditions: Vec<ConditionKind>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { problems_per_tier: 5, temperature: 0.0, conditions: vec![ConditionKind::PostTraining] }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> Result<(), String> {
        if self.problems_per_tier == 0 {
            return Err("problems_per_tier must be positive".into());
        }
        for c in &self.conditions {
            match *c {
                ConditionKind::KShot(0) | ConditionKind::MultiTurn(0) => return Err(format!("bad condition {c}")),
                _ => {}
            }
        }
        Ok(())
    }
}

/// One agent reply within a trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub turn: u32,
    pub prompt: String,
    pub response: String,
    pub schedule: Option<Schedule>,
    pub parse_error: Option<ParseError>,
    /// Unparseable replies are verified as an empty schedule.
    pub verdict: Verdict,
}

/// Every turn taken on one evaluation problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub instance_id: String,
    pub tier: u8,
    pub instance_seed: u64,
    pub max_turns: u32,
    pub turns: Vec<Turn>,
    pub success: bool,
    /// Set when the agent failed to answer; `turn` is the turn that failed.
    pub agent_error: Option<AgentFailure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentFailure {
    pub turn: u32,
    pub error: AgentError,
}

impl Trajectory {
    pub fn turns_used(&self) -> usize {
        self.turns.len()
    }

    pub fn final_verdict(&self) -> Option<&Verdict> {
        self.turns.last().map(|t| &t.verdict)
    }

    /// First turn index `i` (1-based) whose schedule reappears at turn
    /// `i + 2` after a different schedule at `i + 1`.
    pub fn two_cycle(&self) -> Option<u32> {
        self.turns.windows(3).find_map(|w| {
            let (a, b, c) = (&w[0].schedule, &w[1].schedule, &w[2].schedule);
            (a.is_some() && a == c && a != b).then_some(w[0].turn)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierEval {
    pub tier: u8,
    pub condition: EvalCondition,
    pub problems: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub agent_failures: usize,
    pub parse_failures: usize,
    pub records: Vec<Trajectory>,
}

impl TierEval {
    fn from_records(tier: u8, condition: EvalCondition, records: Vec<Trajectory>) -> Self {
        let correct = records.iter().filter(|r| r.success).count();
        let problems = records.len();
        TierEval {
            tier,
            condition,
            problems,
            correct,
            accuracy: if problems == 0 { 0.0 } else { correct as f64 / problems as f64 },
            agent_failures: records.iter().filter(|r| r.agent_error.is_some()).count(),
            parse_failures: records.iter().filter(|r| r.turns.last().is_some_and(|t| t.parse_error.is_some())).count(),
            records,
        }
    }
}

/// Shared settings of an evaluation pass.
pub struct Evaluator<'a> {
    pub catalog: &'a Catalog,
    pub correctness: Correctness,
    pub temperature: f64,
    pub max_tokens: u32,
    pub eval_seed: u64,
    /// Training iterations completed before this pass; sent as request
    /// metadata.
    pub iteration: u32,
    pub parallel: usize,
}

impl Evaluator<'_> {
    /// The first `k` worked examples, all drawn from tier 0.
    pub fn shot_bank(&self, k: u32) -> Vec<Shot> {
        (0..k)
            .filter_map(|i| self.catalog.problem(0, seed::shot_seed(i)).ok())
            .map(|s| Shot { instance: s.instance.clone(), answer: s.witness.clone() })
            .collect()
    }

    pub fn instance_seeds(&self, tier: u8, n: u32) -> Vec<u64> {
        let base = seed::eval_instance_base(self.eval_seed, tier);
        (0..n as u64).map(|k| base + k).collect()
    }

    /// Runs one problem under `condition`. Turn 1 gets the base prompt; each
    /// later turn repeats it with the previous verdict as feedback.
    pub fn trajectory(
        &self,
        agent: &dyn Agent,
        condition: EvalCondition,
        solved: &Solved,
        instance_seed: u64,
        shots: &[Shot],
    ) -> Trajectory {
        let instance = &solved.instance;
        let max_turns = condition.kind.max_turns().max(1);
        let base = PromptStyle { chain_of_thought: condition.chain_of_thought, ..PromptStyle::default() }
            .with_shots(condition.kind.shots() as usize);
        let mut traj = Trajectory {
            instance_id: instance.instance_id().to_string(),
            tier: instance.tier(),
            instance_seed,
            max_turns,
            turns: Vec::new(),
            success: false,
            agent_error: None,
        };
        let mut style = base.clone();
        for turn in 1..=max_turns {
            let prompt = render_prompt(instance, &style, shots);
            let request = AgentRequest {
                request_id: format!("eval-{}-{}-t{turn}", condition.kind, traj.instance_id),
                prompt: prompt.clone(),
                temperature: self.temperature,
                seed: seed::eval_request_seed(self.eval_seed, instance_seed, turn),
                max_tokens: self.max_tokens,
                meta: Some(RequestMeta {
                    tier: instance.tier(),
                    iteration: self.iteration,
                    instance_id: traj.instance_id.clone(),
                }),
            };
            let response = match agent.complete(&request) {
                Ok(r) => r,
                Err(error) => {
                    traj.agent_error = Some(AgentFailure { turn, error });
                    break;
                }
            };
            let (schedule, parse_error) = match text::parse_response(&response.text) {
                Ok(s) => (Some(s), None),
                Err(e) => (None, Some(e)),
            };
            let verdict = verify(instance, schedule.as_ref().unwrap_or(&Schedule::new()), Some(solved.makespan));
            let ok = verdict.is_correct(self.correctness);
            let feedback = feedback_for(&verdict, solved);
            traj.turns.push(Turn { turn, prompt, response: response.text, schedule, parse_error, verdict });
            if ok {
                traj.success = true;
                break;
            }
            style = base.clone().with_feedback(feedback);
        }
        traj
    }

    /// Evaluates `problems_per_tier` held-out problems on each tier.
    pub fn eval_per_tier(
        &self,
        agent: &dyn Agent,
        condition: EvalCondition,
        tiers: &[u8],
        problems_per_tier: u32,
    ) -> Vec<TierEval> {
        let shots = self.shot_bank(condition.kind.shots());
        let jobs: Vec<(u8, u64)> = tiers
            .iter()
            .flat_map(|&t| self.instance_seeds(t, problems_per_tier).into_iter().map(move |s| (t, s)))
            .collect();
        let run = |&(tier, s): &(u8, u64)| -> Option<Trajectory> {
            let solved = self.catalog.problem(tier, s).ok()?;
            Some(self.trajectory(agent, condition, &solved, s, &shots))
        };
        let results: Vec<Option<Trajectory>> = if self.parallel <= 1 {
            jobs.iter().map(run).collect()
        } else {
            let next = AtomicUsize::new(0);
            let slots = Mutex::new(vec![None; jobs.len()]);
            thread::scope(|sc| {
                for _ in 0..self.parallel.min(jobs.len().max(1)) {
                    sc.spawn(|| loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        let Some(job) = jobs.get(i) else { break };
                        let r = run(job);
                        slots.lock().unwrap()[i] = r;
                    });
                }
            });
            slots.into_inner().unwrap()
        };
        let mut out: Vec<TierEval> = Vec::new();
        for &tier in tiers {
            let records: Vec<Trajectory> =
                jobs.iter().zip(&results).filter(|((t, _), _)| *t == tier).filter_map(|(_, r)| r.clone()).collect();
            out.push(TierEval::from_records(tier, condition, records));
        }
        out
    }
}

fn feedback_for(verdict: &Verdict, solved: &Solved) -> String {
    match text::render_feedback(verdict) {
        Ok(f) => f,
        Err(_) => format!(
            "- The schedule is feasible but finishes at time {}; the best possible finish is {}.\n",
            verdict.makespan.unwrap_or_default(),
            solved.makespan
        ),
    }
}
