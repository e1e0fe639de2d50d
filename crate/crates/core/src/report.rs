//! Run reports: per-seed summaries, cross-seed aggregates, the emergence
//! heatmap and the flat tables written next to `report.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::eval::TierEval;
use crate::text::to_canonical_json;
use crate::training::{IterationMetrics, RolloutRecord, RunConfig, TrainerStatus};

/// First iteration at which a tier produced a correct trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Emergence {
    Iteration(u32),
    Unreached,
}

impl Emergence {
    pub fn from_option(first: Option<u32>) -> Self {
        first.map_or(Emergence::Unreached, Emergence::Iteration)
    }
}

impl fmt::Display for Emergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Emergence::Iteration(i) => write!(f, "{i}"),
            Emergence::Unreached => f.write_str("unreached"),
        }
    }
}

impl Serialize for Emergence {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Emergence::Iteration(i) => s.serialize_u32(*i),
            Emergence::Unreached => s.serialize_str("unreached"),
        }
    }
}

impl<'de> Deserialize<'de> for Emergence {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u32),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(i) => Ok(Emergence::Iteration(i)),
            Raw::S(s) if s == "unreached" => Ok(Emergence::Unreached),
            Raw::S(s) => Err(serde::de::Error::custom(format!("bad emergence value `{s}`"))),
        }
    }
}

pub type TierMap<T> = BTreeMap<u8, T>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("seed {seed}: buffer says tier {tier} first succeeded at {buffer}, admission log says {log}")]
pub struct ConsistencyError {
    pub seed: u64,
    pub tier: u8,
    pub buffer: Emergence,
    pub log: Emergence,
}

/// Input for one seed of [`emergence_heatmap`].
pub struct SeedHistory<'a> {
    pub seed: u64,
    pub first_correct: &'a BTreeMap<u8, u32>,
    pub log: &'a [RolloutRecord],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heatmap {
    pub per_seed: BTreeMap<u64, TierMap<Emergence>>,
    /// Most frequent value across seeds; ties go to the earlier iteration.
    pub modal: TierMap<Emergence>,
}

/// Builds the heatmap over `tiers` from each seed's buffer bookkeeping and
/// checks it against a scan of the admission log.
pub fn emergence_heatmap(histories: &[SeedHistory<'_>], tiers: &[u8]) -> Result<Heatmap, ConsistencyError> {
    let mut per_seed = BTreeMap::new();
    for h in histories {
        let mut scanned: BTreeMap<u8, u32> = BTreeMap::new();
        for r in h.log.iter().filter(|r| r.admitted) {
            let e = scanned.entry(r.tier).or_insert(r.iteration);
            *e = (*e).min(r.iteration);
        }
        let mut row = TierMap::new();
        let all: BTreeSet<u8> = tiers.iter().chain(h.first_correct.keys()).chain(scanned.keys()).copied().collect();
        for tier in all {
            let buffer = Emergence::from_option(h.first_correct.get(&tier).copied());
            let log = Emergence::from_option(scanned.get(&tier).copied());
            if buffer != log {
                return Err(ConsistencyError { seed: h.seed, tier, buffer, log });
            }
            if tiers.contains(&tier) {
                row.insert(tier, buffer);
            }
        }
        per_seed.insert(h.seed, row);
    }
    let modal = tiers
        .iter()
        .map(|&t| {
            let mut counts: BTreeMap<Emergence, usize> = BTreeMap::new();
            for row in per_seed.values() {
                *counts.entry(row[&t]).or_default() += 1;
            }
            let best = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(e, _)| *e);
            (t, best.unwrap_or(Emergence::Unreached))
        })
        .collect();
    Ok(Heatmap { per_seed, modal })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; absent for a single value.
    pub std: Option<f64>,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanStd { n, mean: 0.0, std: None };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        MeanStd { n, mean, std }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.std {
            Some(s) => write!(f, "{:.3} ± {:.3}", self.mean, s),
            None => write!(f, "{:.3}", self.mean),
        }
    }
}

/// Per-tier score without the trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierScore {
    pub condition: String,
    pub tier: u8,
    pub problems: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub agent_failures: usize,
    pub parse_failures: usize,
}

impl From<&TierEval> for TierScore {
    fn from(e: &TierEval) -> Self {
        TierScore {
            condition: e.condition.to_string(),
            tier: e.tier,
            problems: e.problems,
            correct: e.correct,
            accuracy: e.accuracy,
            agent_failures: e.agent_failures,
            parse_failures: e.parse_failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub iterations: Vec<IterationMetrics>,
    pub buffer_size: usize,
    pub first_correct: BTreeMap<u8, u32>,
    pub evals: Vec<TierScore>,
}

impl SeedReport {
    pub fn trainer_supported(&self) -> bool {
        self.iterations.iter().any(|m| m.trainer == TrainerStatus::Ack)
    }

    /// Pooled accuracy over every tier evaluated under `condition`.
    pub fn overall_accuracy(&self, condition: &str) -> Option<f64> {
        let (c, p) = self
            .evals
            .iter()
            .filter(|e| e.condition == condition)
            .fold((0, 0), |(c, p), e| (c + e.correct, p + e.problems));
        (p > 0).then(|| c as f64 / p as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Hit rate per iteration.
    pub hit_rate: BTreeMap<u32, MeanStd>,
    pub buffer_size: MeanStd,
    /// condition → tier → accuracy.
    pub tier_accuracy: BTreeMap<String, TierMap<MeanStd>>,
    /// condition → pooled accuracy over all evaluated tiers.
    pub overall_accuracy: BTreeMap<String, MeanStd>,
}

pub fn aggregate(seeds: &[SeedReport]) -> Aggregate {
    let mut hits: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut acc: BTreeMap<String, TierMap<Vec<f64>>> = BTreeMap::new();
    for s in seeds {
        for m in &s.iterations {
            hits.entry(m.iteration).or_default().push(m.hit_rate);
        }
        for e in &s.evals {
            acc.entry(e.condition.clone()).or_default().entry(e.tier).or_default().push(e.accuracy);
        }
    }
    let overall = acc
        .keys()
        .map(|c| {
            let v: Vec<f64> = seeds.iter().filter_map(|s| s.overall_accuracy(c)).collect();
            (c.clone(), MeanStd::of(&v))
        })
        .collect();
    Aggregate {
        hit_rate: hits.into_iter().map(|(k, v)| (k, MeanStd::of(&v))).collect(),
        buffer_size: MeanStd::of(&seeds.iter().map(|s| s.buffer_size as f64).collect::<Vec<_>>()),
        tier_accuracy: acc
            .into_iter()
            .map(|(c, tiers)| (c, tiers.into_iter().map(|(t, v)| (t, MeanStd::of(&v))).collect()))
            .collect(),
        overall_accuracy: overall,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub seeds: Vec<SeedReport>,
    pub aggregate: Aggregate,
    pub heatmap: Heatmap,
    /// Whether the agent acknowledged any training notification.
    pub trainer_supported: bool,
}

impl RunReport {
    pub fn assemble(config: RunConfig, seeds: Vec<SeedReport>, heatmap: Heatmap) -> Self {
        let aggregate = aggregate(&seeds);
        let trainer_supported = seeds.iter().any(SeedReport::trainer_supported);
        RunReport { config, seeds, aggregate, heatmap, trainer_supported }
    }

    /// Rebuilds the report from the per-seed summaries and admission logs.
    pub fn from_parts(
        config: RunConfig,
        seeds: Vec<SeedReport>,
        logs: &[Vec<RolloutRecord>],
    ) -> Result<Self, ConsistencyError> {
        let histories: Vec<SeedHistory<'_>> = seeds
            .iter()
            .zip(logs)
            .map(|(s, log)| SeedHistory { seed: s.seed, first_correct: &s.first_correct, log })
            .collect();
        let heatmap = emergence_heatmap(&histories, &config.training_tiers)?;
        Ok(Self::assemble(config, seeds, heatmap))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Structured,
    Table,
}

pub fn hit_rate_table(report: &RunReport) -> String {
    let mut out = String::from("seed,iteration,attempted,correct,hit_rate\n");
    for s in &report.seeds {
        for m in &s.iterations {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.seed, m.iteration, m.rollouts_attempted, m.rollouts_correct, m.hit_rate
            );
        }
    }
    out
}

pub fn buffer_composition_table(report: &RunReport) -> String {
    let mut out = String::from("seed,iteration,tier,count\n");
    for s in &report.seeds {
        for m in &s.iterations {
            for (tier, count) in &m.buffer_composition {
                let _ = writeln!(out, "{},{},{tier},{count}", s.seed, m.iteration);
            }
        }
    }
    out
}

pub fn tier_accuracy_table(report: &RunReport) -> String {
    let mut out = String::from("condition,tier,seed,problems,correct,accuracy\n");
    let mut rows: Vec<(&str, u8, u64, &TierScore)> = Vec::new();
    for s in &report.seeds {
        for e in &s.evals {
            rows.push((&e.condition, e.tier, s.seed, e));
        }
    }
    rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    for (c, t, seed, e) in rows {
        let _ = writeln!(out, "{c},{t},{seed},{},{},{}", e.problems, e.correct, e.accuracy);
    }
    out
}

/// Mean and sample standard deviation per condition and tier; tier `all`
/// is the pooled accuracy.
pub fn accuracy_summary_table(report: &RunReport) -> String {
    let mut out = String::from("condition,tier,n,mean,std\n");
    let std = |m: &MeanStd| m.std.map(|s| s.to_string()).unwrap_or_default();
    for (c, tiers) in &report.aggregate.tier_accuracy {
        for (t, m) in tiers {
            let _ = writeln!(out, "{c},{t},{},{},{}", m.n, m.mean, std(m));
        }
        if let Some(m) = report.aggregate.overall_accuracy.get(c) {
            let _ = writeln!(out, "{c},all,{},{},{}", m.n, m.mean, std(m));
        }
    }
    out
}

pub fn heatmap_table(report: &RunReport) -> String {
    let mut out = String::from("tier,seed,first_correct\n");
    for (seed, row) in &report.heatmap.per_seed {
        for (tier, e) in row {
            let _ = writeln!(out, "{tier},{seed},{e}");
        }
    }
    for (tier, e) in &report.heatmap.modal {
        let _ = writeln!(out, "{tier},modal,{e}");
    }
    out
}

/// Human-readable summary.
pub fn render_summary(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "seeds: {}", report.seeds.iter().map(|s| s.seed.to_string()).collect::<Vec<_>>().join(", "));
    let _ = writeln!(out, "trainer supported: {}", report.trainer_supported);
    let _ = writeln!(out, "buffer size: {}", report.aggregate.buffer_size);
    out.push_str("\niteration  hit rate\n");
    for (i, m) in &report.aggregate.hit_rate {
        let _ = writeln!(out, "{i:>9}  {m}");
    }
    out.push_str("\ntier  first correct (modal)\n");
    for (t, e) in &report.heatmap.modal {
        let _ = writeln!(out, "{:>4}  {e}", format!("T{t}"));
    }
    for (c, tiers) in &report.aggregate.tier_accuracy {
        let _ = writeln!(out, "\n{c}");
        for (t, m) in tiers {
            let _ = writeln!(out, "{:>4}  {m}", format!("T{t}"));
        }
        if let Some(m) = report.aggregate.overall_accuracy.get(c) {
            let _ = writeln!(out, " all  {m}");
        }
    }
    out
}

#[derive(Debug, Error)]
#[error("cannot write {path}: {source}")]
pub struct WriteError {
    pub path: PathBuf,
    pub source: io::Error,
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), WriteError> {
    let wrap = |source| WriteError { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(wrap)?;
    }
    fs::write(path, contents).map_err(wrap)
}

/// Writes `report.json` and the `tables/` directory under `dir`.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>, WriteError> {
    let tables = dir.join("tables");
    let files = [
        (dir.join("report.json"), to_canonical_json(report)),
        (tables.join("hit_rate.csv"), hit_rate_table(report)),
        (tables.join("buffer_composition.csv"), buffer_composition_table(report)),
        (tables.join("tier_accuracy.csv"), tier_accuracy_table(report)),
        (tables.join("accuracy_summary.csv"), accuracy_summary_table(report)),
        (tables.join("heatmap.csv"), heatmap_table(report)),
    ];
    let mut written = Vec::new();
    for (path, contents) in files {
        write_file(&path, &contents)?;
        written.push(path);
    }
    Ok(written)
}
