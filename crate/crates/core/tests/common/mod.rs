//! Brute-force reference implementations used to check the verifier and the
//! solver. Deliberately naive: nothing here shares code with the library
//! beyond reading instance fields.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use verisched::model::{InstanceData, Job, ProblemInstance, Schedule};

/// Plain copy of an instance's constraints, indexed by job position.
pub struct Plain {
    pub ids: Vec<String>,
    pub dur: Vec<i64>,
    pub demand: Vec<Vec<i64>>,
    pub caps: Vec<i64>,
    pub edges: Vec<(usize, usize)>,
    pub deadline: Option<i64>,
    pub horizon: i64,
}

impl Plain {
    pub fn of(inst: &ProblemInstance) -> Plain {
        let ids: Vec<String> = inst.jobs().iter().map(|j| j.id.clone()).collect();
        let pos: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        Plain {
            dur: inst.jobs().iter().map(|j| j.duration as i64).collect(),
            demand: inst.jobs().iter().map(|j| j.demand.iter().map(|&d| d as i64).collect()).collect(),
            caps: inst.capacities().iter().map(|&c| c as i64).collect(),
            edges: inst.precedence().iter().map(|(a, b)| (pos[a.as_str()], pos[b.as_str()])).collect(),
            deadline: inst.deadline().map(i64::from),
            horizon: inst.horizon() as i64,
            ids,
        }
    }

    pub fn schedule(&self, starts: &[i64]) -> Schedule {
        self.ids.iter().cloned().zip(starts.iter().copied()).collect()
    }

    /// Whether `starts` satisfies every constraint, by direct simulation of
    /// each time step.
    pub fn feasible(&self, starts: &[i64]) -> bool {
        let n = self.ids.len();
        for i in 0..n {
            if starts[i] < 0 || starts[i] + self.dur[i] > self.horizon {
                return false;
            }
        }
        for &(p, s) in &self.edges {
            if starts[p] + self.dur[p] > starts[s] {
                return false;
            }
        }
        let end = (0..n).map(|i| starts[i] + self.dur[i]).max().unwrap_or(0);
        if let Some(d) = self.deadline {
            if end > d {
                return false;
            }
        }
        for t in 0..end {
            for (r, &cap) in self.caps.iter().enumerate() {
                let used: i64 =
                    (0..n).filter(|&i| starts[i] <= t && t < starts[i] + self.dur[i]).map(|i| self.demand[i][r]).sum();
                if used > cap {
                    return false;
                }
            }
        }
        true
    }

    pub fn makespan(&self, starts: &[i64]) -> i64 {
        (0..self.ids.len()).map(|i| starts[i] + self.dur[i]).max().unwrap_or(0)
    }

    /// Calls `f` on every start vector with each start in `lo..=hi_i`, where
    /// `hi_i = horizon - dur_i + slack`.
    pub fn for_each_schedule(&self, lo: i64, slack: i64, mut f: impl FnMut(&[i64])) {
        let n = self.ids.len();
        let hi: Vec<i64> = (0..n).map(|i| self.horizon - self.dur[i] + slack).collect();
        let mut s = vec![lo; n];
        loop {
            f(&s);
            let mut k = 0;
            loop {
                if k == n {
                    return;
                }
                if s[k] < hi[k] {
                    s[k] += 1;
                    break;
                }
                s[k] = lo;
                k += 1;
            }
        }
    }

    /// Smallest makespan of any feasible schedule, found by trying
    /// `M = 1, 2, ...` and searching every assignment with finishes `<= M`.
    pub fn optimum(&self) -> Option<i64> {
        let limit = self.deadline.map_or(self.horizon, |d| d.min(self.horizon));
        (1..=limit).find(|&m| {
            let mut starts = vec![0; self.ids.len()];
            self.exists(0, m, &mut starts)
        })
    }

    fn exists(&self, k: usize, m: i64, starts: &mut Vec<i64>) -> bool {
        if k == self.ids.len() {
            return self.feasible(starts);
        }
        for t in 0..=(m - self.dur[k]) {
            starts[k] = t;
            if self.partial_ok(k, starts) && self.exists(k + 1, m, starts) {
                return true;
            }
        }
        false
    }

    /// Constraints among jobs `0..=k` only.
    fn partial_ok(&self, k: usize, starts: &[i64]) -> bool {
        for &(p, s) in &self.edges {
            if p <= k && s <= k && starts[p] + self.dur[p] > starts[s] {
                return false;
            }
        }
        let (a, b) = (starts[k], starts[k] + self.dur[k]);
        for t in a..b {
            for (r, &cap) in self.caps.iter().enumerate() {
                let used: i64 =
                    (0..=k).filter(|&i| starts[i] <= t && t < starts[i] + self.dur[i]).map(|i| self.demand[i][r]).sum();
                if used > cap {
                    return false;
                }
            }
        }
        true
    }
}

/// Random instance with at most `max_jobs` jobs, durations `1..=max_dur` and
/// horizon at most `max_horizon`.
pub fn random_instance(rng: &mut ChaCha8Rng, max_jobs: usize, max_dur: u32, max_horizon: u32) -> ProblemInstance {
    let n = rng.random_range(1..=max_jobs);
    let mut durations: Vec<u32> = (0..n).map(|_| rng.random_range(1..=max_dur)).collect();
    while durations.iter().sum::<u32>() > max_horizon {
        let i = durations.iter().enumerate().max_by_key(|(_, d)| **d).map(|(i, _)| i).unwrap();
        durations[i] -= 1;
    }
    let total: u32 = durations.iter().sum();
    let horizon = rng.random_range(total..=max_horizon.max(total));
    let resources = rng.random_range(0..=2usize);
    let caps: Vec<u32> = (0..resources).map(|_| rng.random_range(1..=3)).collect();
    let ids: Vec<String> = (0..n).map(|i| ((b'A' + i as u8) as char).to_string()).collect();
    let jobs = durations
        .iter()
        .zip(&ids)
        .map(|(&d, id)| Job::new(id.clone(), d).with_demand(caps.iter().map(|&c| rng.random_range(0..=c)).collect()))
        .collect();
    let density = rng.random_range(0..=3u32);
    // Edges follow a random order, so job order is not always topological.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut precedence = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_ratio(density, 6) {
                precedence.push((ids[order[i]].clone(), ids[order[j]].clone()));
            }
        }
    }
    let deadline = rng.random_bool(0.4).then(|| rng.random_range(1..=horizon));
    let data = InstanceData {
        instance_id: "random".into(),
        tier: 0,
        seed: 0,
        jobs,
        precedence,
        capacities: caps,
        deadline,
        horizon,
    };
    ProblemInstance::new(data).expect("valid random instance")
}
