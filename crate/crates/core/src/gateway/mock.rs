//! Deterministic in-process agents.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Agent, AgentError, AgentRequest, AgentResponse, TrainReply, DEFAULT_TIMEOUT};
use crate::catalog::{InstanceLookup, Solved};
use crate::model::{Schedule, Time};
use crate::seed;
use crate::text::render_answer_block;

const PREAMBLE: &str = "Placing the jobs in order and checking prerequisites, resources and the deadline.\n\n";
const GARBAGE: &str = "I am not sure how to schedule these jobs. Could you clarify the constraints?";

fn answer_text(schedule: &Schedule) -> String {
    format!("{PREAMBLE}{}\n", render_answer_block(schedule))
}

fn find(lookup: &dyn InstanceLookup, request: &AgentRequest) -> Result<Arc<Solved>, AgentError> {
    let meta = request.meta.as_ref().ok_or(AgentError::MissingMetadata)?;
    lookup
        .lookup(&meta.instance_id)
        .ok_or_else(|| AgentError::Protocol(format!("unknown instance `{}`", meta.instance_id)))
}

/// Always answers with the solver's optimal witness.
pub struct OracleAgent {
    lookup: Arc<dyn InstanceLookup>,
}

impl OracleAgent {
    pub fn new(lookup: Arc<dyn InstanceLookup>) -> Self {
        OracleAgent { lookup }
    }
}

impl Agent for OracleAgent {
    fn complete(&self, request: &AgentRequest) -> Result<AgentResponse, AgentError> {
        let solved = find(self.lookup.as_ref(), request)?;
        Ok(AgentResponse { request_id: request.request_id.clone(), text: answer_text(&solved.witness), meta: None })
    }

    fn train(&self, _traces: &Path) -> Result<TrainReply, AgentError> {
        Ok(TrainReply::Ack)
    }
}

/// How the noisy mock fails.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// Move one job so that the schedule is guaranteed infeasible.
    #[default]
    ShiftOneStart,
    DropOneJob,
    GarbageText,
}

/// Success probability per tier and iteration.
///
/// `rates[tier][k]` is the probability at iteration `k + 1`; the last entry
/// extends to all later iterations and iteration 0 uses the first entry.
/// Tiers without a row never succeed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillSchedule {
    pub rates: BTreeMap<u8, Vec<f64>>,
    #[serde(default)]
    pub corruption: Corruption,
}

impl SkillSchedule {
    pub fn constant(rates: &[(u8, f64)], corruption: Corruption) -> Self {
        SkillSchedule { rates: rates.iter().map(|&(t, p)| (t, vec![p])).collect(), corruption }
    }

    /// The capability ramp used for the dynamics checks: warmup and deadline
    /// tiers solvable from the start, sequencing from iteration 2, pairwise
    /// composition (rarely) from iteration 3, resource and full composition
    /// never.
    pub fn ramping() -> Self {
        let rates = [
            (0, vec![0.8]),
            (1, vec![0.0, 0.3]),
            (2, vec![0.0]),
            (3, vec![0.4]),
            (4, vec![0.0, 0.0, 0.05]),
            (5, vec![0.0]),
        ];
        SkillSchedule { rates: rates.into_iter().collect(), corruption: Corruption::ShiftOneStart }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (tier, row) in &self.rates {
            if row.is_empty() {
                return Err(format!("tier {tier} has an empty rate row"));
            }
            if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(format!("tier {tier} has rate {p} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn rate(&self, tier: u8, iteration: u32) -> f64 {
        match self.rates.get(&tier) {
            Some(row) if !row.is_empty() => {
                let k = (iteration.max(1) as usize).min(row.len()) - 1;
                row[k]
            }
            _ => 0.0,
        }
    }
}

impl Default for SkillSchedule {
    fn default() -> Self {
        Self::ramping()
    }
}

/// Answers correctly with probability `rates[tier][iteration]`, otherwise
/// emits the configured corruption. The draw comes from a generator seeded
/// by the request seed, so responses are a pure function of the request.
pub struct NoisyAgent {
    skills: SkillSchedule,
    lookup: Arc<dyn InstanceLookup>,
    trained: AtomicU32,
}

impl NoisyAgent {
    pub fn new(skills: SkillSchedule, lookup: Arc<dyn InstanceLookup>) -> Self {
        NoisyAgent { skills, lookup, trained: AtomicU32::new(0) }
    }

    /// Number of training notifications acknowledged so far.
    pub fn trained(&self) -> u32 {
        self.trained.load(Ordering::SeqCst)
    }
}

pub fn corrupt(mode: Corruption, solved: &Solved, rng: &mut ChaCha8Rng) -> String {
    let inst = &solved.instance;
    let mut sched = solved.witness.clone();
    match mode {
        Corruption::GarbageText => return GARBAGE.to_string(),
        Corruption::DropOneJob => {
            let k = rng.random_range(0..inst.jobs().len());
            sched.starts.remove(&inst.jobs()[k].id);
        }
        Corruption::ShiftOneStart => {
            let jobs = inst.jobs();
            let mut pred_finish: Vec<Option<Time>> = vec![None; jobs.len()];
            for (p, s) in inst.edge_indices() {
                let f = sched.get(&jobs[p].id).unwrap_or(0) + jobs[p].duration as Time;
                pred_finish[s] = Some(pred_finish[s].map_or(f, |g: Time| g.max(f)));
            }
            let constrained: Vec<usize> = (0..jobs.len()).filter(|&i| pred_finish[i].is_some()).collect();
            if constrained.is_empty() {
                // No prerequisites anywhere: push one job past the horizon.
                let k = rng.random_range(0..jobs.len());
                let start = inst.horizon() as Time - jobs[k].duration as Time + 1;
                sched.set(jobs[k].id.clone(), start);
            } else {
                // Start one unit before the latest prerequisite finishes.
                let k = constrained[rng.random_range(0..constrained.len())];
                sched.set(jobs[k].id.clone(), pred_finish[k].unwrap_or(1) - 1);
            }
        }
    }
    answer_text(&sched)
}

impl Agent for NoisyAgent {
    fn complete(&self, request: &AgentRequest) -> Result<AgentResponse, AgentError> {
        let meta = request.meta.as_ref().ok_or(AgentError::MissingMetadata)?;
        let solved = find(self.lookup.as_ref(), request)?;
        let p = self.skills.rate(meta.tier, meta.iteration);
        let mut rng = seed::rng(request.seed);
        let u: f64 = rng.random();
        let text =
            if u < p { answer_text(&solved.witness) } else { corrupt(self.skills.corruption, &solved, &mut rng) };
        Ok(AgentResponse { request_id: request.request_id.clone(), text, meta: None })
    }

    fn train(&self, _traces: &Path) -> Result<TrainReply, AgentError> {
        self.trained.fetch_add(1, Ordering::SeqCst);
        Ok(TrainReply::Ack)
    }
}

/// Never answers: every request times out and training is unreachable.
pub struct FailingAgent;

impl Agent for FailingAgent {
    fn complete(&self, _request: &AgentRequest) -> Result<AgentResponse, AgentError> {
        Err(AgentError::Timeout(DEFAULT_TIMEOUT.as_millis() as u64))
    }

    fn train(&self, _traces: &Path) -> Result<TrainReply, AgentError> {
        Err(AgentError::Transport("agent unreachable".into()))
    }
}

/// Replays a fixed list of replies in order, one per request.
pub struct ScriptedAgent {
    replies: Mutex<VecDeque<String>>,
}

impl ScriptedAgent {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        ScriptedAgent { replies: Mutex::new(replies.into_iter().map(Into::into).collect()) }
    }
}

impl Agent for ScriptedAgent {
    fn complete(&self, request: &AgentRequest) -> Result<AgentResponse, AgentError> {
        let text =
            self.replies.lock().unwrap().pop_front().ok_or_else(|| AgentError::Transport("script exhausted".into()))?;
        Ok(AgentResponse { request_id: request.request_id.clone(), text, meta: None })
    }

    fn train(&self, _traces: &Path) -> Result<TrainReply, AgentError> {
        Ok(TrainReply::Unsupported)
    }
}
