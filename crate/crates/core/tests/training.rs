use std::collections::BTreeSet;
use std::fs;
use std::sync::Arc;

use verisched::catalog::{Catalog, InstanceLookup};
use verisched::gateway::{Agent, NoisyAgent, OracleAgent, SkillSchedule};
use verisched::runner::{run_detailed, seed_dir};
use verisched::text::{parse_response, traces_from_str};
use verisched::training::{Ablations, RunConfig};
use verisched::verify::{verify, Correctness};

fn noisy(_: u64, c: Arc<Catalog>) -> Result<Box<dyn Agent>, verisched::gateway::AgentError> {
    Ok(Box::new(NoisyAgent::new(SkillSchedule::ramping(), c)))
}

fn small(seeds: Vec<u64>) -> RunConfig {
    RunConfig {
        rollouts_per_iteration: 40,
        seeds,
        eval: verisched::eval::EvalSettings { problems_per_tier: 2, ..Default::default() },
        ..RunConfig::default()
    }
}

#[test]
fn oracle_defaults_fill_the_buffer() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig { seeds: vec![42], ..RunConfig::default() };
    let factory = |_: u64, c: Arc<Catalog>| Ok(Box::new(OracleAgent::new(c)) as Box<dyn Agent>);
    let (report, runs) = run_detailed(&config, &factory, dir.path(), 4).unwrap();
    assert_eq!(runs[0].buffer.len(), 504);
    assert!(report.seeds[0].iterations.iter().all(|m| m.hit_rate == 1.0));
    assert!(report.heatmap.per_seed[&42].values().all(|e| e.to_string() == "1"));
}

#[test]
fn buffer_invariants_under_noisy_agent() {
    let dir = tempfile::tempdir().unwrap();
    let config = small(vec![7, 8]);
    let (_, runs) = run_detailed(&config, &noisy, dir.path(), 3).unwrap();
    for run in &runs {
        let iters = &run.report.iterations;
        for w in iters.windows(2) {
            for (tier, count) in &w[0].buffer_composition {
                assert!(w[1].buffer_composition[tier] >= *count);
            }
        }
        let mut admitted_before = 0;
        for m in iters {
            let total: usize = m.buffer_composition.values().sum();
            assert_eq!(total - admitted_before, m.rollouts_correct);
            admitted_before = total;
            assert!((0.0..=1.0).contains(&m.hit_rate));
        }
        // Admission soundness: replay every trace against its stored instance.
        let catalog = config.catalog();
        for t in run.buffer.traces() {
            let seed = run.log.iter().find(|r| r.instance_id == t.instance_id).unwrap().instance_seed;
            let solved = catalog.problem(t.tier, seed).unwrap();
            let sched = parse_response(&t.completion).unwrap();
            assert_eq!(sched, t.schedule);
            assert!(verify(&solved.instance, &sched, Some(solved.makespan)).is_correct(config.correctness));
        }
    }
}

#[test]
fn eval_and_training_instances_are_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = small(vec![42]);
    let (_, runs) = run_detailed(&config, &noisy, dir.path(), 1).unwrap();
    let train: BTreeSet<u64> = runs[0].log.iter().map(|r| r.instance_seed).collect();
    let eval: BTreeSet<u64> = runs[0].evals.iter().flat_map(|e| e.records.iter().map(|r| r.instance_seed)).collect();
    assert!(!eval.is_empty());
    assert!(train.is_disjoint(&eval));
}

#[test]
fn no_buffer_batches_hold_only_current_traces() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig { ablations: Ablations { no_buffer: true, no_cot: false }, ..small(vec![5]) };
    let (report, _) = run_detailed(&config, &noisy, dir.path(), 2).unwrap();
    for m in &report.seeds[0].iterations {
        let path = seed_dir(dir.path(), 5).join(format!("traces/iter-{}.jsonl", m.iteration));
        let recs = traces_from_str(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(recs.len(), m.rollouts_correct);
        assert!(recs.iter().all(|r| r.iteration == m.iteration));
    }
}

#[test]
fn optimal_required_admits_only_optimal_schedules() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig { correctness: Correctness::OptimalRequired, iterations: 2, ..small(vec![3]) };
    let (_, runs) = run_detailed(&config, &noisy, dir.path(), 1).unwrap();
    let catalog = config.catalog();
    for t in runs[0].buffer.traces() {
        let solved = catalog.lookup(&t.instance_id).or_else(|| {
            let seed = runs[0].log.iter().find(|r| r.instance_id == t.instance_id)?.instance_seed;
            catalog.problem(t.tier, seed).ok()
        });
        let solved = solved.unwrap();
        assert_eq!(verify(&solved.instance, &t.schedule, Some(solved.makespan)).optimal, Some(true));
    }
}
