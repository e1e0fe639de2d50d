//! Deterministic ground-truth verifier.
//!
//! [`verify`] never fails: malformed schedules surface as violations. All
//! violated constraints are reported, sorted by kind and then by the job,
//! edge or (resource, time) they concern.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ProblemInstance, Schedule, Time};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Violation {
    /// `succ` starts before `pred` finishes.
    PrecedenceViolation {
        pred: String,
        succ: String,
        pred_finish: Time,
        succ_start: Time,
    },
    CapacityViolation {
        resource: usize,
        time: Time,
        usage: u64,
        capacity: u32,
    },
    DeadlineViolation {
        completion: Time,
        deadline: u32,
    },
    MissingJob {
        id: String,
    },
    UnknownJob {
        id: String,
    },
    NegativeStart {
        id: String,
        start: Time,
    },
    HorizonExceeded {
        id: String,
        finish: Time,
        horizon: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub feasible: bool,
    pub violations: Vec<Violation>,
    /// Latest completion over the instance's jobs; present iff every job has
    /// a start.
    pub makespan: Option<Time>,
    /// Present iff an oracle makespan was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimal: Option<bool>,
}

impl Verdict {
    /// Whether the verdict meets the given correctness mode.
    pub fn is_correct(&self, mode: Correctness) -> bool {
        match mode {
            Correctness::Feasible => self.feasible,
            Correctness::OptimalRequired => self.feasible && self.optimal == Some(true),
        }
    }
}

/// What a rollout must achieve to count as correct.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correctness {
    #[default]
    Feasible,
    OptimalRequired,
}

pub fn verify(instance: &ProblemInstance, schedule: &Schedule, oracle_makespan: Option<Time>) -> Verdict {
    let jobs = instance.jobs();
    let mut violations = Vec::new();

    let starts: Vec<Option<Time>> = jobs.iter().map(|j| schedule.get(&j.id)).collect();
    for (job, start) in jobs.iter().zip(&starts) {
        match *start {
            None => violations.push(Violation::MissingJob { id: job.id.clone() }),
            Some(s) => {
                if s < 0 {
                    violations.push(Violation::NegativeStart { id: job.id.clone(), start: s });
                }
                let finish = s + job.duration as Time;
                if finish > instance.horizon() as Time {
                    violations.push(Violation::HorizonExceeded {
                        id: job.id.clone(),
                        finish,
                        horizon: instance.horizon(),
                    });
                }
            }
        }
    }
    for (id, _) in schedule.iter() {
        if instance.job_index(id).is_none() {
            violations.push(Violation::UnknownJob { id: id.to_string() });
        }
    }

    for (p, s) in instance.edge_indices() {
        if let (Some(ps), Some(ss)) = (starts[p], starts[s]) {
            let pred_finish = ps + jobs[p].duration as Time;
            if ss < pred_finish {
                violations.push(Violation::PrecedenceViolation {
                    pred: jobs[p].id.clone(),
                    succ: jobs[s].id.clone(),
                    pred_finish,
                    succ_start: ss,
                });
            }
        }
    }

    // Capacity: event sweep over every placed job, at every integer time it runs.
    if instance.resource_count() > 0 {
        let mut events: Vec<(Time, usize, i64)> = Vec::new();
        for (i, start) in starts.iter().enumerate() {
            if let Some(s) = *start {
                let e = s + jobs[i].duration as Time;
                events.push((s, i, 1));
                events.push((e, i, -1));
            }
        }
        if !events.is_empty() {
            let lo = events.iter().map(|e| e.0).min().unwrap_or(0);
            let hi = events.iter().map(|e| e.0).max().unwrap_or(0);
            for r in 0..instance.resource_count() {
                let cap = instance.capacities()[r];
                let mut delta = vec![0i64; (hi - lo + 1) as usize];
                for &(t, i, sign) in &events {
                    delta[(t - lo) as usize] += sign * jobs[i].demand[r] as i64;
                }
                let mut usage = 0i64;
                for (k, d) in delta.iter().enumerate() {
                    usage += d;
                    if usage > cap as i64 {
                        violations.push(Violation::CapacityViolation {
                            resource: r,
                            time: lo + k as Time,
                            usage: usage as u64,
                            capacity: cap,
                        });
                    }
                }
            }
        }
    }

    let latest = jobs.iter().zip(&starts).filter_map(|(j, s)| s.map(|s| s + j.duration as Time)).max();
    if let (Some(deadline), Some(completion)) = (instance.deadline(), latest) {
        if completion > deadline as Time {
            violations.push(Violation::DeadlineViolation { completion, deadline });
        }
    }

    violations.sort();
    let makespan = if starts.iter().all(Option::is_some) { latest } else { None };
    let feasible = violations.is_empty();
    let optimal = oracle_makespan.map(|m| feasible && makespan == Some(m));
    Verdict { feasible, violations, makespan, optimal }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("schedule has no start for job `{0}`")]
    MissingJob(String),
    #[error("schedule names unknown job `{0}`")]
    UnknownJob(String),
    #[error("job `{0}` has a negative start")]
    NegativeStart(String),
}

/// Per-resource usage at each integer time step of `[0, horizon)`.
/// Usage of jobs running past the horizon is truncated.
pub fn resource_profile(instance: &ProblemInstance, schedule: &Schedule) -> Result<Vec<Vec<u64>>, ProfileError> {
    for (id, _) in schedule.iter() {
        if instance.job_index(id).is_none() {
            return Err(ProfileError::UnknownJob(id.to_string()));
        }
    }
    let horizon = instance.horizon() as usize;
    let mut profile = vec![vec![0u64; horizon]; instance.resource_count()];
    for job in instance.jobs() {
        let s = schedule.get(&job.id).ok_or_else(|| ProfileError::MissingJob(job.id.clone()))?;
        if s < 0 {
            return Err(ProfileError::NegativeStart(job.id.clone()));
        }
        let end = (s as usize + job.duration as usize).min(horizon);
        for (r, row) in profile.iter_mut().enumerate() {
            for slot in row.iter_mut().take(end).skip(s as usize) {
                *slot += job.demand[r] as u64;
            }
        }
    }
    Ok(profile)
}
