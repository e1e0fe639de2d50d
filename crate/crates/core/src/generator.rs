//! Seeded instance generation at six compositional difficulty tiers.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{InstanceData, Job, ProblemInstance};
use crate::seed;
use crate::solver::{solve_optimal, SolveStatus, DEFAULT_NODE_BUDGET};

pub const MAX_ATTEMPTS: u32 = 32;

/// Non-negative rational, serialized as `"num/den"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ratio {
    pub num: u32,
    pub den: u32,
}

impl Ratio {
    pub const fn new(num: u32, den: u32) -> Self {
        Ratio { num, den }
    }

    /// `ceil(value * self)`, exact.
    pub fn ceil_mul(self, value: u64) -> u64 {
        (value * self.num as u64).div_ceil(self.den as u64)
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Ratio {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (n, d) = s.split_once('/').unwrap_or((s, "1"));
        let num = n.trim().parse().map_err(|_| format!("bad ratio `{s}`"))?;
        let den: u32 = d.trim().parse().map_err(|_| format!("bad ratio `{s}`"))?;
        if den == 0 {
            return Err(format!("zero denominator in `{s}`"));
        }
        Ok(Ratio { num, den })
    }
}

impl Serialize for Ratio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Precedence,
    Resource,
    Deadline,
}

/// How a tier's families are applied to each instance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    /// Every instance carries all of the tier's families.
    #[default]
    All,
    /// Instance `k` carries pair `k mod 3` of {P,R}, {P,D}, {R,D}. The {R,D}
    /// pair keeps a sparse precedence graph at half the edge density.
    Pairwise,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierSpec {
    pub tier: u8,
    pub job_count: usize,
    pub families: BTreeSet<Family>,
    #[serde(default)]
    pub composition: Composition,
    pub duration_range: (u32, u32),
    pub edge_density: Ratio,
    pub resource_count: usize,
    pub capacity_range: (u32, u32),
    pub demand_range: (u32, u32),
    pub deadline_slack: Ratio,
    pub held_out: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("tier {0} is outside 0..=5")]
    BadTier(u8),
    #[error("tier spec has no constraint families")]
    NoFamilies,
    #[error("job count must be between 1 and 26, got {0}")]
    JobCount(usize),
    #[error("invalid {0} range")]
    Range(&'static str),
    #[error("edge density must lie in [0, 1]")]
    Density,
    #[error("max demand exceeds min capacity")]
    DemandOverCapacity,
    #[error("deadline slack must be at least 1")]
    Slack,
    #[error("tier 5 must be held out")]
    HoldOut,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerateError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("no feasible instance for tier {tier} seed {seed} after {attempts} attempts")]
    GenerationExhausted { tier: u8, seed: u64, attempts: u32 },
}

fn valid_range((lo, hi): (u32, u32), allow_zero: bool) -> bool {
    lo <= hi && (allow_zero || lo >= 1)
}

impl TierSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        if self.tier > 5 {
            return Err(SpecError::BadTier(self.tier));
        }
        if self.families.is_empty() {
            return Err(SpecError::NoFamilies);
        }
        if !(1..=26).contains(&self.job_count) {
            return Err(SpecError::JobCount(self.job_count));
        }
        if !valid_range(self.duration_range, false) {
            return Err(SpecError::Range("duration"));
        }
        if self.edge_density.den == 0 || self.edge_density.num > self.edge_density.den {
            return Err(SpecError::Density);
        }
        if self.uses(Family::Resource) {
            if !valid_range(self.capacity_range, false) {
                return Err(SpecError::Range("capacity"));
            }
            if !valid_range(self.demand_range, true) {
                return Err(SpecError::Range("demand"));
            }
            if self.demand_range.1 > self.capacity_range.0 {
                return Err(SpecError::DemandOverCapacity);
            }
            if self.resource_count == 0 {
                return Err(SpecError::Range("resource count"));
            }
        }
        if self.uses(Family::Deadline)
            && (self.deadline_slack.den == 0 || self.deadline_slack.num < self.deadline_slack.den)
        {
            return Err(SpecError::Slack);
        }
        if self.tier == 5 && !self.held_out {
            return Err(SpecError::HoldOut);
        }
        Ok(())
    }

    fn uses(&self, f: Family) -> bool {
        self.families.contains(&f)
    }

    /// Families carried by the instance generated at `index`, plus whether
    /// precedence is kept at reduced density.
    pub fn families_for(&self, index: u64) -> (BTreeSet<Family>, bool) {
        use Family::*;
        match self.composition {
            Composition::All => (self.families.clone(), false),
            Composition::Pairwise => match index % 3 {
                0 => ([Precedence, Resource].into(), false),
                1 => ([Precedence, Deadline].into(), false),
                _ => ([Precedence, Resource, Deadline].into(), true),
            },
        }
    }
}

fn families(list: &[Family]) -> BTreeSet<Family> {
    list.iter().copied().collect()
}

/// The six default tiers.
///
/// | tier | jobs | families                       |
/// |------|------|--------------------------------|
/// | 0    | 4    | precedence                     |
/// | 1    | 6    | precedence                     |
/// | 2    | 6    | precedence, resource           |
/// | 3    | 6    | precedence, deadline           |
/// | 4    | 8    | pairwise, cycling per instance |
/// | 5    | 10   | all three (held out)           |
pub fn default_tiers() -> Vec<TierSpec> {
    use Family::*;
    let base = |tier: u8, job_count: usize, fams: &[Family]| TierSpec {
        tier,
        job_count,
        families: families(fams),
        composition: Composition::All,
        duration_range: (1, 5),
        edge_density: Ratio::new(2, 5),
        resource_count: 1,
        capacity_range: (2, 3),
        demand_range: (1, 2),
        deadline_slack: Ratio::new(6, 5),
        held_out: false,
    };
    vec![
        base(0, 4, &[Precedence]),
        base(1, 6, &[Precedence]),
        base(2, 6, &[Precedence, Resource]),
        base(3, 6, &[Precedence, Deadline]),
        TierSpec { composition: Composition::Pairwise, ..base(4, 8, &[Precedence, Resource, Deadline]) },
        TierSpec { held_out: true, resource_count: 2, ..base(5, 10, &[Precedence, Resource, Deadline]) },
    ]
}

/// Job ids: `A`..`Z`.
pub fn job_id(i: usize) -> String {
    char::from(b'A' + i as u8).to_string()
}

pub fn instance_id(tier: u8, seed: u64) -> String {
    format!("t{tier}-{seed:016x}")
}

/// Generates an oracle-feasible instance for `(spec, seed)`. For pairwise
/// tiers the constraint pair is chosen by `seed mod 3`.
///
/// Draws are rerolled until every family in play actually constrains the
/// instance: at least one precedence edge, and total demand above capacity
/// on each resource.
pub fn generate_instance(spec: &TierSpec, seed: u64) -> Result<ProblemInstance, GenerateError> {
    generate_with_budget(spec, seed, DEFAULT_NODE_BUDGET)
}

pub fn generate_with_budget(spec: &TierSpec, seed: u64, node_budget: u64) -> Result<ProblemInstance, GenerateError> {
    spec.validate()?;
    let (fams, sparse) = spec.families_for(seed);
    for attempt in 0..MAX_ATTEMPTS {
        let draw_seed = if attempt == 0 { seed } else { seed::mix_all(seed::NS_REROLL, &[seed, attempt as u64]) };
        if let Some(inst) = sample(spec, &fams, sparse, seed, draw_seed, node_budget) {
            return Ok(inst);
        }
    }
    Err(GenerateError::GenerationExhausted { tier: spec.tier, seed, attempts: MAX_ATTEMPTS })
}

fn sample(
    spec: &TierSpec,
    fams: &BTreeSet<Family>,
    sparse: bool,
    seed: u64,
    draw_seed: u64,
    node_budget: u64,
) -> Option<ProblemInstance> {
    let mut rng = seed::rng(draw_seed);
    let n = spec.job_count;
    let resources = if fams.contains(&Family::Resource) { spec.resource_count } else { 0 };
    let (dlo, dhi) = spec.duration_range;
    let durations: Vec<u32> = (0..n).map(|_| rng.random_range(dlo..=dhi)).collect();
    let capacities: Vec<u32> =
        (0..resources).map(|_| rng.random_range(spec.capacity_range.0..=spec.capacity_range.1)).collect();
    let jobs: Vec<Job> = durations
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let demand = (0..resources).map(|_| rng.random_range(spec.demand_range.0..=spec.demand_range.1)).collect();
            Job::new(job_id(i), d).with_demand(demand)
        })
        .collect();
    let mut density = spec.edge_density;
    if sparse {
        density.den *= 2;
    }
    let mut precedence = Vec::new();
    if fams.contains(&Family::Precedence) {
        for i in 0..n {
            for j in i + 1..n {
                if density.num > 0 && rng.random_ratio(density.num, density.den) {
                    precedence.push((job_id(i), job_id(j)));
                }
            }
        }
    }
    if fams.contains(&Family::Precedence) && n > 1 && precedence.is_empty() {
        return None;
    }
    // Every resource must be able to bind.
    for (r, &cap) in capacities.iter().enumerate() {
        if jobs.iter().map(|j| j.demand[r]).sum::<u32>() <= cap {
            return None;
        }
    }
    let horizon: u32 = durations.iter().sum();
    let data = InstanceData {
        instance_id: instance_id(spec.tier, seed),
        tier: spec.tier,
        seed,
        jobs,
        precedence,
        capacities,
        deadline: None,
        horizon,
    };
    let relaxed = ProblemInstance::new(data).ok()?;
    let solved = solve_optimal(&relaxed, node_budget);
    if solved.status != SolveStatus::Optimal {
        return None;
    }
    if !fams.contains(&Family::Deadline) {
        return Some(relaxed);
    }
    let optimum = solved.makespan? as u64;
    let deadline = spec.deadline_slack.ceil_mul(optimum).min(horizon as u64) as u32;
    let inst = relaxed.with_deadline(Some(deadline)).ok()?;
    (solve_optimal(&inst, node_budget).status == SolveStatus::Optimal).then_some(inst)
}
