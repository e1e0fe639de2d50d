//! Exact optimal-makespan solver.
//!
//! Depth-first branch-and-bound over start times. Jobs are branched in
//! topological order (ties by id) and start times are tried in ascending
//! order, so the first optimal leaf reached is the lexicographically least
//! optimal schedule under that order. A subtree is cut when a lower bound on
//! its makespan reaches the incumbent; two bounds are used:
//!
//! * earliest start of every unplaced job (precedence-propagated, then
//!   pushed past slots where the placed jobs leave too little capacity)
//!   plus its longest path to a sink;
//! * per resource, the remaining energy (demand x duration) must fit in the
//!   capacity left free before the incumbent.
//!
//! The global deadline is a hard completion limit inside the search.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::model::{ProblemInstance, Schedule, Time};

pub const DEFAULT_NODE_BUDGET: u64 = 5_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    /// Node budget exhausted before optimality was proven.
    Aborted,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub makespan: Option<Time>,
    pub witness: Option<Schedule>,
    pub nodes_explored: u64,
    pub elapsed: Duration,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Lower bound on the optimal makespan: the largest of the critical path,
/// the per-resource work bound `ceil(work / capacity)` and the longest job.
pub fn lower_bound(instance: &ProblemInstance) -> Time {
    let tails = tails(instance);
    let critical = tails.iter().copied().max().unwrap_or(0);
    let longest = instance.jobs().iter().map(|j| j.duration as Time).max().unwrap_or(0);
    let work = (0..instance.resource_count())
        .map(|r| {
            let total: u64 = instance.jobs().iter().map(|j| j.demand[r] as u64 * j.duration as u64).sum();
            total.div_ceil(instance.capacities()[r] as u64) as Time
        })
        .max()
        .unwrap_or(0);
    critical.max(longest).max(work)
}

/// Longest path from each job's start to the end of the project, including
/// the job's own duration.
fn tails(instance: &ProblemInstance) -> Vec<Time> {
    let jobs = instance.jobs();
    let mut succs = vec![Vec::new(); jobs.len()];
    for (p, s) in instance.edge_indices() {
        succs[p].push(s);
    }
    let mut tail = vec![0; jobs.len()];
    for &j in instance.topological_order().iter().rev() {
        let after = succs[j].iter().map(|&s| tail[s]).max().unwrap_or(0);
        tail[j] = jobs[j].duration as Time + after;
    }
    tail
}

pub fn solve_optimal(instance: &ProblemInstance, node_budget: u64) -> SolveResult {
    let started = Instant::now();
    let mut search = Search::new(instance, node_budget);
    let finished = search.dfs(0, 0);
    let status = if !finished {
        SolveStatus::Aborted
    } else if search.best_starts.is_some() {
        SolveStatus::Optimal
    } else {
        SolveStatus::Infeasible
    };
    let (makespan, witness) = match (status, &search.best_starts) {
        (SolveStatus::Optimal, Some(starts)) => {
            let sched = instance.jobs().iter().zip(starts).map(|(j, &s)| (j.id.clone(), s)).collect();
            (Some(search.best), Some(sched))
        }
        _ => (None, None),
    };
    SolveResult { status, makespan, witness, nodes_explored: search.nodes, elapsed: started.elapsed() }
}

struct Search<'a> {
    order: &'a [usize],
    dur: Vec<Time>,
    demand: Vec<Vec<u32>>,
    caps: Vec<u32>,
    preds: Vec<Vec<usize>>,
    tail: Vec<Time>,
    /// usage[r][t] for t in [0, limit)
    usage: Vec<Vec<u32>>,
    starts: Vec<Time>,
    placed: Vec<bool>,
    scratch_est: Vec<Time>,
    /// Incumbent makespan; starts at limit + 1 (nothing found yet).
    best: Time,
    best_starts: Option<Vec<Time>>,
    nodes: u64,
    budget: u64,
}

impl<'a> Search<'a> {
    fn new(instance: &'a ProblemInstance, budget: u64) -> Self {
        let jobs = instance.jobs();
        let n = jobs.len();
        let limit = match instance.deadline() {
            Some(d) => d.min(instance.horizon()),
            None => instance.horizon(),
        } as Time;
        let mut preds = vec![Vec::new(); n];
        for (p, s) in instance.edge_indices() {
            preds[s].push(p);
        }
        Search {
            order: instance.topological_order(),
            dur: jobs.iter().map(|j| j.duration as Time).collect(),
            demand: jobs.iter().map(|j| j.demand.clone()).collect(),
            caps: instance.capacities().to_vec(),
            preds,
            tail: tails(instance),
            usage: vec![vec![0; limit as usize]; instance.resource_count()],
            starts: vec![0; n],
            placed: vec![false; n],
            scratch_est: vec![0; n],
            best: limit + 1,
            best_starts: None,
            nodes: 0,
            budget,
        }
    }

    /// Returns false when the node budget ran out.
    fn dfs(&mut self, depth: usize, max_end: Time) -> bool {
        if depth == self.order.len() {
            // Pruning guarantees max_end < best here.
            self.best = max_end;
            self.best_starts = Some(self.starts.clone());
            return true;
        }
        if self.bound(depth, max_end) >= self.best {
            return true;
        }
        let j = self.order[depth];
        let est = self.preds[j].iter().map(|&p| self.starts[p] + self.dur[p]).max().unwrap_or(0);
        let mut s = est;
        while s + self.tail[j] < self.best {
            if self.fits(j, s) {
                self.nodes += 1;
                if self.nodes > self.budget {
                    return false;
                }
                self.place(j, s, true);
                let ok = self.dfs(depth + 1, max_end.max(s + self.dur[j]));
                self.place(j, s, false);
                if !ok {
                    return false;
                }
            }
            s += 1;
        }
        true
    }

    fn bound(&mut self, depth: usize, max_end: Time) -> Time {
        let mut lb = max_end;
        let mut min_est = Time::MAX;
        for &u in &self.order[depth..] {
            let mut est = self.preds[u]
                .iter()
                .map(|&p| if self.placed[p] { self.starts[p] } else { self.scratch_est[p] } + self.dur[p])
                .max()
                .unwrap_or(0);
            // Later placements only add usage, so the first slot that fits
            // now is a valid earliest start.
            while est + self.tail[u] < self.best && !self.fits(u, est) {
                est += 1;
            }
            if est + self.tail[u] >= self.best {
                return self.best;
            }
            self.scratch_est[u] = est;
            lb = lb.max(est + self.tail[u]);
            min_est = min_est.min(est);
        }
        if lb >= self.best || depth == self.order.len() {
            return lb;
        }
        // Energy of unplaced jobs against free capacity in [min_est, best - 1).
        let window_end = (self.best - 1) as usize;
        for r in 0..self.caps.len() {
            let need: u64 = self.order[depth..].iter().map(|&u| self.demand[u][r] as u64 * self.dur[u] as u64).sum();
            if need == 0 {
                continue;
            }
            let cap = self.caps[r] as u64;
            let free: u64 =
                self.usage[r][min_est as usize..window_end.max(min_est as usize)].iter().map(|&u| cap - u as u64).sum();
            if need > free {
                return self.best;
            }
        }
        lb
    }

    fn fits(&self, j: usize, s: Time) -> bool {
        let (lo, hi) = (s as usize, (s + self.dur[j]) as usize);
        self.caps.iter().enumerate().all(|(r, &cap)| {
            let d = self.demand[j][r];
            d == 0 || self.usage[r][lo..hi].iter().all(|&u| u + d <= cap)
        })
    }

    fn place(&mut self, j: usize, s: Time, on: bool) {
        let (lo, hi) = (s as usize, (s + self.dur[j]) as usize);
        for r in 0..self.caps.len() {
            let d = self.demand[j][r];
            if d == 0 {
                continue;
            }
            for u in &mut self.usage[r][lo..hi] {
                if on {
                    *u += d;
                } else {
                    *u -= d;
                }
            }
        }
        self.starts[j] = s;
        self.placed[j] = on;
    }
}
