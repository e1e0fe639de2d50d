//! Problem instances and candidate schedules.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Integer time. Starts may be negative in a [`Schedule`] (agents can emit
/// anything); the verifier flags those.
pub type Time = i64;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub duration: u32,
    #[serde(default)]
    pub demand: Vec<u32>,
}

impl Job {
    pub fn new(id: impl Into<String>, duration: u32) -> Self {
        Job { id: id.into(), duration, demand: Vec::new() }
    }

    pub fn with_demand(mut self, demand: Vec<u32>) -> Self {
        self.demand = demand;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstanceError {
    #[error("instance has no jobs")]
    NoJobs,
    #[error("tier {0} is outside 0..=5")]
    BadTier(u8),
    #[error("job id `{0}` is not a valid identifier")]
    BadJobId(String),
    #[error("duplicate job id `{0}`")]
    DuplicateJob(String),
    #[error("job `{0}` has zero duration")]
    ZeroDuration(String),
    #[error("job `{id}` has {got} demands but the instance has {expected} resources")]
    DemandArity { id: String, expected: usize, got: usize },
    #[error("job `{id}` demands {demand} of resource {resource} with capacity {capacity}")]
    DemandExceedsCapacity { id: String, resource: usize, demand: u32, capacity: u32 },
    #[error("resource {0} has zero capacity")]
    ZeroCapacity(usize),
    #[error("precedence edge names unknown job `{0}`")]
    UnknownEdgeEndpoint(String),
    #[error("precedence edge {0} -> {0} is a self-loop")]
    SelfLoop(String),
    #[error("precedence graph has a cycle")]
    Cycle,
    #[error("deadline must be positive")]
    ZeroDeadline,
    #[error("horizon {horizon} is below the total duration {total}")]
    HorizonTooShort { horizon: u32, total: u64 },
}

/// Raw, unchecked form of an instance; the serialized shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceData {
    pub instance_id: String,
    pub tier: u8,
    pub seed: u64,
    pub jobs: Vec<Job>,
    #[serde(default)]
    pub precedence: Vec<(String, String)>,
    #[serde(default)]
    pub capacities: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline: Option<u32>,
    pub horizon: u32,
}

/// A validated scheduling problem: jobs, an acyclic precedence graph,
/// renewable resource capacities, an optional global deadline, and a
/// horizon large enough for a fully serial schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "InstanceData", into = "InstanceData")]
pub struct ProblemInstance {
    instance_id: String,
    tier: u8,
    seed: u64,
    jobs: Vec<Job>,
    precedence: Vec<(String, String)>,
    capacities: Vec<u32>,
    deadline: Option<u32>,
    horizon: u32,
    index: HashMap<String, usize>,
    topo: Vec<usize>,
}

pub(crate) fn valid_job_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 32 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl TryFrom<InstanceData> for ProblemInstance {
    type Error = InstanceError;

    fn try_from(d: InstanceData) -> Result<Self, Self::Error> {
        if d.tier > 5 {
            return Err(InstanceError::BadTier(d.tier));
        }
        if d.jobs.is_empty() {
            return Err(InstanceError::NoJobs);
        }
        let mut index = HashMap::with_capacity(d.jobs.len());
        for (i, job) in d.jobs.iter().enumerate() {
            if !valid_job_id(&job.id) {
                return Err(InstanceError::BadJobId(job.id.clone()));
            }
            if index.insert(job.id.clone(), i).is_some() {
                return Err(InstanceError::DuplicateJob(job.id.clone()));
            }
            if job.duration == 0 {
                return Err(InstanceError::ZeroDuration(job.id.clone()));
            }
            if job.demand.len() != d.capacities.len() {
                return Err(InstanceError::DemandArity {
                    id: job.id.clone(),
                    expected: d.capacities.len(),
                    got: job.demand.len(),
                });
            }
            for (r, (&dem, &cap)) in job.demand.iter().zip(&d.capacities).enumerate() {
                if dem > cap {
                    return Err(InstanceError::DemandExceedsCapacity {
                        id: job.id.clone(),
                        resource: r,
                        demand: dem,
                        capacity: cap,
                    });
                }
            }
        }
        if let Some(r) = d.capacities.iter().position(|&c| c == 0) {
            return Err(InstanceError::ZeroCapacity(r));
        }
        for (p, s) in &d.precedence {
            for end in [p, s] {
                if !index.contains_key(end) {
                    return Err(InstanceError::UnknownEdgeEndpoint(end.clone()));
                }
            }
            if p == s {
                return Err(InstanceError::SelfLoop(p.clone()));
            }
        }
        if d.deadline == Some(0) {
            return Err(InstanceError::ZeroDeadline);
        }
        let total: u64 = d.jobs.iter().map(|j| j.duration as u64).sum();
        if (d.horizon as u64) < total {
            return Err(InstanceError::HorizonTooShort { horizon: d.horizon, total });
        }
        let topo = topological_order(&d.jobs, &d.precedence, &index)?;
        Ok(ProblemInstance {
            instance_id: d.instance_id,
            tier: d.tier,
            seed: d.seed,
            jobs: d.jobs,
            precedence: d.precedence,
            capacities: d.capacities,
            deadline: d.deadline,
            horizon: d.horizon,
            index,
            topo,
        })
    }
}

impl From<ProblemInstance> for InstanceData {
    fn from(p: ProblemInstance) -> Self {
        InstanceData {
            instance_id: p.instance_id,
            tier: p.tier,
            seed: p.seed,
            jobs: p.jobs,
            precedence: p.precedence,
            capacities: p.capacities,
            deadline: p.deadline,
            horizon: p.horizon,
        }
    }
}

/// Kahn's algorithm, always releasing the lexicographically smallest
/// available id.
fn topological_order(
    jobs: &[Job],
    edges: &[(String, String)],
    index: &HashMap<String, usize>,
) -> Result<Vec<usize>, InstanceError> {
    let n = jobs.len();
    let mut indegree = vec![0usize; n];
    let mut succs = vec![Vec::new(); n];
    for (p, s) in edges {
        let (p, s) = (index[p], index[s]);
        succs[p].push(s);
        indegree[s] += 1;
    }
    let mut ready: BTreeSet<(&str, usize)> =
        (0..n).filter(|&i| indegree[i] == 0).map(|i| (jobs[i].id.as_str(), i)).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(first) = ready.pop_first() {
        let i = first.1;
        order.push(i);
        for &s in &succs[i] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.insert((jobs[s].id.as_str(), s));
            }
        }
    }
    if order.len() != n {
        return Err(InstanceError::Cycle);
    }
    Ok(order)
}

impl ProblemInstance {
    pub fn new(data: InstanceData) -> Result<Self, InstanceError> {
        Self::try_from(data)
    }

    pub fn instance_id(&self) -> &str {
        &self.instance_id
    }

    pub fn tier(&self) -> u8 {
        self.tier
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn jobs(&self) -> &[Job] {
        &self.jobs
    }

    pub fn precedence(&self) -> &[(String, String)] {
        &self.precedence
    }

    pub fn capacities(&self) -> &[u32] {
        &self.capacities
    }

    pub fn resource_count(&self) -> usize {
        self.capacities.len()
    }

    pub fn deadline(&self) -> Option<u32> {
        self.deadline
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn job_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn job(&self, id: &str) -> Option<&Job> {
        self.job_index(id).map(|i| &self.jobs[i])
    }

    /// Job indices in topological order, ties broken by id.
    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    /// Precedence edges as `(pred, succ)` index pairs.
    pub fn edge_indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.precedence.iter().map(|(p, s)| (self.index[p], self.index[s]))
    }

    pub fn total_duration(&self) -> u64 {
        self.jobs.iter().map(|j| j.duration as u64).sum()
    }

    /// Copy with a different deadline. The result is revalidated.
    pub fn with_deadline(&self, deadline: Option<u32>) -> Result<Self, InstanceError> {
        let mut data = InstanceData::from(self.clone());
        data.deadline = deadline;
        Self::new(data)
    }

    pub fn to_data(&self) -> InstanceData {
        InstanceData::from(self.clone())
    }
}

/// Candidate solution: job id to start time.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Schedule {
    pub starts: BTreeMap<String, Time>,
}

impl Schedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: &str) -> Option<Time> {
        self.starts.get(id).copied()
    }

    pub fn set(&mut self, id: impl Into<String>, start: Time) {
        self.starts.insert(id.into(), start);
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Time)> {
        self.starts.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

impl<S: Into<String>> FromIterator<(S, Time)> for Schedule {
    fn from_iter<I: IntoIterator<Item = (S, Time)>>(iter: I) -> Self {
        Schedule { starts: iter.into_iter().map(|(k, v)| (k.into(), v)).collect() }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (id, s) in self.iter() {
            if !first {
                f.write_str(", ")?;
            }
            first = false;
            write!(f, "{id}: {s}")?;
        }
        Ok(())
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn rejects_cycles() {
        let d = data(vec![Job::new("A", 1), Job::new("B", 1)], &[("A", "B"), ("B", "A")], vec![], 2);
        assert_eq!(ProblemInstance::new(d).unwrap_err(), InstanceError::Cycle);
    }

    #[test]
    fn rejects_demand_over_capacity() {
        let d = data(vec![Job::new("A", 1).with_demand(vec![3])], &[], vec![2], 1);
        assert!(matches!(
            ProblemInstance::new(d),
            Err(InstanceError::DemandExceedsCapacity { demand: 3, capacity: 2, .. })
        ));
    }

    #[test]
    fn rejects_short_horizon_and_bad_arity() {
        let d = data(vec![Job::new("A", 3), Job::new("B", 2)], &[], vec![], 4);
        assert!(matches!(ProblemInstance::new(d), Err(InstanceError::HorizonTooShort { .. })));
        let d = data(vec![Job::new("A", 3)], &[], vec![1], 4);
        assert!(matches!(ProblemInstance::new(d), Err(InstanceError::DemandArity { .. })));
    }

    #[test]
    fn rejects_unknown_endpoints_and_duplicates() {
        let d = data(vec![Job::new("A", 1)], &[("A", "Z")], vec![], 1);
        assert_eq!(ProblemInstance::new(d).unwrap_err(), InstanceError::UnknownEdgeEndpoint("Z".into()));
        let d = data(vec![Job::new("A", 1), Job::new("A", 1)], &[], vec![], 2);
        assert_eq!(ProblemInstance::new(d).unwrap_err(), InstanceError::DuplicateJob("A".into()));
    }

    #[test]
    fn topological_order_breaks_ties_by_id() {
        let d = data(
            vec![Job::new("C", 1), Job::new("B", 1), Job::new("A", 1), Job::new("D", 1)],
            &[("C", "A")],
            vec![],
            4,
        );
        let inst = ProblemInstance::new(d).unwrap();
        let ids: Vec<_> = inst.topological_order().iter().map(|&i| inst.jobs()[i].id.as_str()).collect();
        assert_eq!(ids, ["B", "C", "A", "D"]);
    }

    #[test]
    fn deserialization_validates() {
        let bad = r#"{"instance_id":"x","tier":0,"seed":0,"jobs":[{"id":"A","duration":0}],"horizon":1}"#;
        assert!(serde_json::from_str::<ProblemInstance>(bad).is_err());
        let ok = serde_json::to_string(&chain()).unwrap();
        assert_eq!(serde_json::from_str::<ProblemInstance>(&ok).unwrap(), chain());
    }
}
