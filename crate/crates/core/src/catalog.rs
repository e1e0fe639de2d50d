//! Generated problems with their oracle solutions, cached by instance id.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::generator::{generate_with_budget, GenerateError, TierSpec};
use crate::model::{ProblemInstance, Schedule, Time};
use crate::solver::{solve_optimal, SolveStatus};

/// An instance together with its optimal makespan and witness.
#[derive(Debug, Clone)]
pub struct Solved {
    pub instance: ProblemInstance,
    pub makespan: Time,
    pub witness: Schedule,
}

impl Solved {
    pub fn solve(instance: ProblemInstance, node_budget: u64) -> Option<Solved> {
        let r = solve_optimal(&instance, node_budget);
        match (r.status, r.makespan, r.witness) {
            (SolveStatus::Optimal, Some(makespan), Some(witness)) => Some(Solved { instance, makespan, witness }),
            _ => None,
        }
    }
}

/// Lookup of solved problems by instance id, used by in-process mock agents.
pub trait InstanceLookup: Send + Sync {
    fn lookup(&self, instance_id: &str) -> Option<Arc<Solved>>;
}

pub struct Catalog {
    tiers: Vec<TierSpec>,
    node_budget: u64,
    cache: Mutex<HashMap<String, Arc<Solved>>>,
}

impl Catalog {
    pub fn new(tiers: Vec<TierSpec>, node_budget: u64) -> Self {
        Catalog { tiers, node_budget, cache: Mutex::new(HashMap::new()) }
    }

    pub fn tiers(&self) -> &[TierSpec] {
        &self.tiers
    }

    pub fn spec(&self, tier: u8) -> Option<&TierSpec> {
        self.tiers.iter().find(|s| s.tier == tier)
    }

    pub fn node_budget(&self) -> u64 {
        self.node_budget
    }

    /// Generates (or fetches) the problem for `(tier, seed)`.
    pub fn problem(&self, tier: u8, seed: u64) -> Result<Arc<Solved>, GenerateError> {
        let spec = self.spec(tier).ok_or(GenerateError::Spec(crate::generator::SpecError::BadTier(tier)))?;
        let id = crate::generator::instance_id(tier, seed);
        if let Some(hit) = self.cache.lock().unwrap().get(&id) {
            return Ok(hit.clone());
        }
        let instance = generate_with_budget(spec, seed, self.node_budget)?;
        let solved = Solved::solve(instance, self.node_budget).ok_or(GenerateError::GenerationExhausted {
            tier,
            seed,
            attempts: 0,
        })?;
        let solved = Arc::new(solved);
        self.cache.lock().unwrap().insert(id, solved.clone());
        Ok(solved)
    }

    /// Registers an externally built problem.
    pub fn insert(&self, solved: Solved) -> Arc<Solved> {
        let solved = Arc::new(solved);
        self.cache.lock().unwrap().insert(solved.instance.instance_id().to_string(), solved.clone());
        solved
    }
}

impl InstanceLookup for Catalog {
    fn lookup(&self, instance_id: &str) -> Option<Arc<Solved>> {
        self.cache.lock().unwrap().get(instance_id).cloned()
    }
}
