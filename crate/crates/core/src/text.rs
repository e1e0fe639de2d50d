//! Natural-language prompts, answer parsing, verifier feedback, and the
//! canonical file formats.
//!
//! Agents answer with a fenced block of `id: start` lines:
//!
//! ````text
//! ```
//! A: 0
//! B: 3
//! ```
//! ````
//!
//! The last fenced block in a response wins; without any fence, a trailing
//! run of `id: start` lines is accepted.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{valid_job_id, ProblemInstance, Schedule, Time};
use crate::verify::{Verdict, Violation};

pub const MAX_SHOTS: usize = 8;

pub const COT_INSTRUCTION: &str = "Think step by step. Work out when each job can start given its \
prerequisites, the resource limits and the deadline, check your schedule against every constraint, \
and only then write the final answer block.";

pub const DIRECT_INSTRUCTION: &str = "Reply with the final answer block only.";

pub const FEEDBACK_HEADER: &str = "Your previous schedule was rejected:";

const FENCE: &str = "```";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptStyle {
    pub chain_of_thought: bool,
    pub shots: usize,
    /// Rendered verifier feedback for a revision turn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
}

impl PromptStyle {
    pub fn plain() -> Self {
        Self::default()
    }

    pub fn cot() -> Self {
        PromptStyle { chain_of_thought: true, ..Self::default() }
    }

    pub fn with_shots(mut self, shots: usize) -> Self {
        self.shots = shots.min(MAX_SHOTS);
        self
    }

    pub fn with_feedback(mut self, feedback: impl Into<String>) -> Self {
        self.feedback = Some(feedback.into());
        self
    }
}

/// A worked example: an instance and a correct schedule for it.
#[derive(Debug, Clone)]
pub struct Shot {
    pub instance: ProblemInstance,
    pub answer: Schedule,
}

fn describe_problem(out: &mut String, instance: &ProblemInstance) {
    let jobs = instance.jobs();
    let _ = writeln!(out, "A project has {} jobs. Assign every job an integer start time.", jobs.len());
    out.push_str("\nJobs:\n");
    for job in jobs {
        let _ = write!(out, "- {}: duration {}", job.id, job.duration);
        let needs: Vec<String> = job
            .demand
            .iter()
            .enumerate()
            .filter(|(_, &d)| d > 0)
            .map(|(r, d)| format!("{d} unit{} of resource {r}", if *d == 1 { "" } else { "s" }))
            .collect();
        if !needs.is_empty() {
            let _ = write!(out, ", uses {}", needs.join(" and "));
        }
        out.push('\n');
    }
    out.push_str("\nPrecedence:\n");
    if instance.precedence().is_empty() {
        out.push_str("- none\n");
    }
    for (p, s) in instance.precedence() {
        let _ = writeln!(out, "- {p} must finish before {s} starts.");
    }
    if !instance.capacities().is_empty() {
        out.push_str("\nResources (available at every time step, used only while a job runs):\n");
        for (r, cap) in instance.capacities().iter().enumerate() {
            let _ = writeln!(out, "- resource {r}: capacity {cap}");
        }
    }
    out.push_str("\nTiming:\n");
    let _ =
        writeln!(out, "- Jobs start at time 0 or later and must finish by time {} (the horizon).", instance.horizon());
    if let Some(d) = instance.deadline() {
        let _ = writeln!(out, "- Deadline: every job must finish by time {d}.");
    }
    out.push_str("- A job with start s and duration d occupies times s, s+1, ..., s+d-1.\n");
}

/// Renders `schedule` as a fenced answer block, one `id: start` line per job.
pub fn render_answer_block(schedule: &Schedule) -> String {
    let mut out = String::from(FENCE);
    out.push('\n');
    for (id, s) in schedule.iter() {
        let _ = writeln!(out, "{id}: {s}");
    }
    out.push_str(FENCE);
    out
}

/// Renders the prompt for `instance`. Worked examples are taken in order from
/// `shot_bank`; a bank shorter than `style.shots` yields fewer examples.
pub fn render_prompt(instance: &ProblemInstance, style: &PromptStyle, shot_bank: &[Shot]) -> String {
    let mut out = String::new();
    if style.chain_of_thought {
        out.push_str(COT_INSTRUCTION);
        out.push_str("\n\n");
    }
    let shots: Vec<&Shot> = shot_bank.iter().take(style.shots.min(MAX_SHOTS)).collect();
    if !shots.is_empty() {
        let _ = writeln!(
            out,
            "Here {} {} solved example{}.",
            if shots.len() == 1 { "is" } else { "are" },
            shots.len(),
            if shots.len() == 1 { "" } else { "s" }
        );
        for (k, shot) in shots.iter().enumerate() {
            let _ = writeln!(out, "\n### Example {}\n", k + 1);
            describe_problem(&mut out, &shot.instance);
            out.push_str("\nAnswer:\n");
            out.push_str(&render_answer_block(&shot.answer));
            out.push('\n');
        }
        out.push_str("\n### Problem\n\n");
    }
    describe_problem(&mut out, instance);
    out.push_str("\nEnd your reply with a fenced answer block containing one `id: start` line per job:\n");
    out.push_str(FENCE);
    out.push('\n');
    for job in instance.jobs() {
        let _ = writeln!(out, "{}: <start>", job.id);
    }
    out.push_str(FENCE);
    out.push('\n');
    if !style.chain_of_thought {
        out.push_str(DIRECT_INSTRUCTION);
        out.push('\n');
    }
    if let Some(feedback) = &style.feedback {
        out.push('\n');
        out.push_str(FEEDBACK_HEADER);
        out.push('\n');
        out.push_str(feedback.trim_end());
        out.push_str("\nFix every problem listed above and answer again.\n");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail")]
pub enum ParseError {
    #[error("no answer block found")]
    NoAnswerBlock,
    #[error("malformed answer block: {0}")]
    MalformedBlock(String),
    #[error("start time for `{0}` is not an integer")]
    NonIntegerStart(String),
}

pub type ParseOutcome = Result<Schedule, ParseError>;

enum Line<'a> {
    Blank,
    Entry(&'a str, Time),
    BadStart(&'a str),
    Malformed,
}

fn classify(line: &str) -> Line<'_> {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return Line::Blank;
    }
    let body = trimmed.strip_prefix("- ").or_else(|| trimmed.strip_prefix("* ")).unwrap_or(trimmed);
    let Some((id, value)) = body.split_once(':') else {
        return Line::Malformed;
    };
    let id = id.trim();
    if !valid_job_id(id) {
        return Line::Malformed;
    }
    match value.trim().parse::<Time>() {
        Ok(v) => Line::Entry(id, v),
        Err(_) => Line::BadStart(id),
    }
}

fn parse_block(block: &str) -> ParseOutcome {
    let mut schedule = Schedule::new();
    for line in block.lines() {
        match classify(line) {
            Line::Blank => {}
            Line::Entry(id, v) => {
                if schedule.get(id).is_some() {
                    return Err(ParseError::MalformedBlock(format!("duplicate job `{id}`")));
                }
                schedule.set(id, v);
            }
            Line::BadStart(id) => return Err(ParseError::NonIntegerStart(id.to_string())),
            Line::Malformed => return Err(ParseError::MalformedBlock(line.trim().to_string())),
        }
    }
    if schedule.is_empty() {
        return Err(ParseError::MalformedBlock("empty answer block".into()));
    }
    Ok(schedule)
}

/// Extracts a schedule from free-form agent text. Total: never panics.
pub fn parse_response(text: &str) -> ParseOutcome {
    let fences: Vec<usize> = text.match_indices(FENCE).map(|(i, _)| i).collect();
    if fences.len() >= 2 {
        let pair = fences.len() / 2 - 1;
        let (open, close) = (fences[2 * pair], fences[2 * pair + 1]);
        let mut inner = &text[open + FENCE.len()..close];
        // Drop an info string such as "text" on the opening fence line.
        if let Some((first, rest)) = inner.split_once('\n') {
            if !first.trim().is_empty() && matches!(classify(first), Line::Malformed) && !first.contains(':') {
                inner = rest;
            }
        }
        return parse_block(inner);
    }
    // Fallback: trailing run of `id: start` lines.
    let mut entries = Vec::new();
    for line in text.lines().rev().skip_while(|l| l.trim().is_empty()) {
        match classify(line) {
            Line::Entry(id, v) => entries.push((id, v)),
            _ => break,
        }
    }
    if entries.is_empty() {
        return Err(ParseError::NoAnswerBlock);
    }
    entries.reverse();
    let mut schedule = Schedule::new();
    for (id, v) in entries {
        if schedule.get(id).is_some() {
            return Err(ParseError::MalformedBlock(format!("duplicate job `{id}`")));
        }
        schedule.set(id, v);
    }
    Ok(schedule)
}

/// One sentence describing a violation.
pub fn describe_violation(v: &Violation) -> String {
    match v {
        Violation::PrecedenceViolation { pred, succ, pred_finish, succ_start } => format!(
            "Job {succ} starts at time {succ_start}, before its prerequisite {pred} finishes at time {pred_finish}."
        ),
        Violation::CapacityViolation { resource, time, usage, capacity } => {
            format!("Resource {resource} is over capacity at time {time}: usage {usage} exceeds capacity {capacity}.")
        }
        Violation::DeadlineViolation { completion, deadline } => {
            format!("The last job finishes at time {completion}, after the deadline {deadline}.")
        }
        Violation::MissingJob { id } => format!("Job {id} has no start time."),
        Violation::UnknownJob { id } => format!("Job {id} is not part of this project."),
        Violation::NegativeStart { id, start } => format!("Job {id} starts at negative time {start}."),
        Violation::HorizonExceeded { id, finish, horizon } => {
            format!("Job {id} finishes at time {finish}, beyond the horizon {horizon}.")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot render feedback for a feasible verdict")]
pub struct FeasibleVerdict;

/// Feedback text for an infeasible verdict: one `- ` line per violation, in
/// the verdict's order.
pub fn render_feedback(verdict: &Verdict) -> Result<String, FeasibleVerdict> {
    if verdict.feasible {
        return Err(FeasibleVerdict);
    }
    let mut out = String::new();
    for v in &verdict.violations {
        let _ = writeln!(out, "- {}", describe_violation(v));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Files

fn sort_keys(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, sort_keys(v))).collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

/// Pretty JSON with sorted keys, two-space indentation and a trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable value");
    let mut s = serde_json::to_string_pretty(&sort_keys(v)).expect("serializable value");
    s.push('\n');
    s
}

pub fn instance_to_string(instance: &ProblemInstance) -> String {
    to_canonical_json(instance)
}

pub fn instance_from_str(s: &str) -> Result<ProblemInstance, serde_json::Error> {
    serde_json::from_str(s)
}

pub fn schedule_to_string(schedule: &Schedule) -> String {
    to_canonical_json(schedule)
}

/// Reads a schedule from its JSON form, or failing that from agent-style
/// text containing an answer block.
pub fn schedule_from_str(s: &str) -> Result<Schedule, ParseError> {
    if let Ok(sched) = serde_json::from_str::<Schedule>(s) {
        return Ok(sched);
    }
    if let Ok(starts) = serde_json::from_str::<BTreeMap<String, Time>>(s) {
        return Ok(Schedule { starts });
    }
    parse_response(s)
}

/// One training example. Prompt and completion are kept apart so a trainer
/// can mask the prompt tokens and take loss on the completion only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub prompt: String,
    pub completion: String,
    pub tier: u8,
    pub iteration: u32,
    pub instance_id: String,
}

/// JSON lines, one record per line.
pub fn traces_to_string(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("serializable record"));
        out.push('\n');
    }
    out
}

pub fn traces_from_str(s: &str) -> Result<Vec<TraceRecord>, serde_json::Error> {
    s.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}
