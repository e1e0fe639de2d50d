use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use verisched::catalog::{Catalog, InstanceLookup};
use verisched::eval::{ConditionKind, EvalCondition, Evaluator};
use verisched::gateway::{connect, AgentSpec};
use verisched::generator::generate_with_budget;
use verisched::report::render_summary;
use verisched::runner::{regenerate_report, run};
use verisched::solver::{solve_optimal, SolveStatus};
use verisched::text::{
    describe_violation, instance_from_str, instance_to_string, schedule_from_str, schedule_to_string, to_canonical_json,
};
use verisched::training::RunConfig;
use verisched::verify::verify;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "verisched",
    version,
    about = "Verifiable scheduling problems and a rejection-sampling training harness"
)]
struct Cli {
    /// Run configuration (JSON). `default` selects the built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<String>,
    /// Output directory (or file, for single-artifact commands).
    #[arg(long, global = true, env = "VERISCHED_OUT", value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed; `run` accepts it several times.
    #[arg(long, global = true, value_name = "N")]
    seed: Vec<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate problem instances.
    Gen(GenArgs),
    /// Solve an instance to optimality.
    Solve(SolveArgs),
    /// Check a schedule against an instance.
    Verify(VerifyArgs),
    /// Run the training loop and evaluation.
    Run(RunArgs),
    /// Evaluate an agent on held-out problems.
    Eval(EvalArgs),
    /// Rebuild and print the report of a finished run.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    tier: u8,
    /// Instances to generate, at consecutive seeds.
    #[arg(long, default_value_t = 1)]
    count: u64,
}

#[derive(Args)]
struct SolveArgs {
    instance: PathBuf,
    #[arg(long)]
    node_budget: Option<u64>,
    /// Fail unless the solver proves optimality.
    #[arg(long)]
    require_optimal_witness: bool,
}

#[derive(Args)]
struct VerifyArgs {
    instance: PathBuf,
    /// JSON schedule or a reply containing an answer block.
    schedule: PathBuf,
    /// Exit with status 3 when the schedule is infeasible.
    #[arg(long)]
    strict: bool,
    /// Also solve the instance and report whether the makespan is optimal.
    #[arg(long)]
    optimal: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, env = "VERISCHED_AGENT", value_name = "stdio:CMD|http:URL|mock:NAME")]
    agent: Option<String>,
    /// Concurrent agent requests; 1 is sequential.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    iterations: Option<u32>,
    #[arg(long)]
    rollouts: Option<u32>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    no_buffer: bool,
    #[arg(long)]
    no_cot: bool,
    #[arg(long)]
    dedup: bool,
    #[arg(long)]
    optimal_required: bool,
    #[arg(long, value_name = "N")]
    fixed_pool: Option<u32>,
    #[arg(long)]
    node_budget: Option<u64>,
    /// Evaluation condition; repeatable.
    #[arg(long, value_name = "COND")]
    condition: Vec<String>,
    /// Evaluation problems per tier.
    #[arg(long)]
    n: Option<u32>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, env = "VERISCHED_AGENT", value_name = "stdio:CMD|http:URL|mock:NAME")]
    agent: Option<String>,
    /// zero-shot, k-shot:K, multi-turn:N or post-training.
    #[arg(long, default_value = "zero-shot")]
    condition: String,
    #[arg(long)]
    no_cot: bool,
    /// `A..B` (inclusive) or a comma-separated list.
    #[arg(long)]
    tiers: Option<String>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, value_name = "DIR")]
    run: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Structured,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

type CmdResult = Result<u8, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn runtime(msg: impl ToString) -> Failure {
    Failure::Runtime(msg.to_string())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| runtime(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    match cli.config.as_deref() {
        None | Some("default") => Ok(RunConfig::default()),
        Some(path) => {
            let text = read(Path::new(path))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("--config {path}: {e}")))
        }
    }
}

fn single_seed(cli: &Cli) -> Result<Option<u64>, Failure> {
    match cli.seed.as_slice() {
        [] => Ok(None),
        [s] => Ok(Some(*s)),
        _ => Err(usage("--seed may be given only once for this command")),
    }
}

fn agent_spec(agent: &Option<String>) -> Result<AgentSpec, Failure> {
    let raw = agent.as_deref().ok_or_else(|| usage("--agent is required (or set VERISCHED_AGENT)"))?;
    raw.parse().map_err(|e: String| usage(format!("--agent: {e}")))
}

fn parse_tiers(s: &str) -> Result<Vec<u8>, Failure> {
    let bad = || usage(format!("--tiers: cannot read `{s}`"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u8 = a.trim().parse().map_err(|_| bad())?;
        let b: u8 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
}

fn gen(cli: &Cli, args: &GenArgs) -> CmdResult {
    let config = load_config(cli)?;
    let spec = config
        .tiers
        .iter()
        .find(|s| s.tier == args.tier)
        .ok_or_else(|| usage(format!("--tier: no tier {}", args.tier)))?;
    let start = single_seed(cli)?.unwrap_or(0);
    if args.count == 0 {
        return Err(usage("--count must be positive"));
    }
    for seed in start..start + args.count {
        let instance = generate_with_budget(spec, seed, config.node_budget).map_err(runtime)?;
        let text = instance_to_string(&instance);
        match &cli.out {
            Some(dir) => {
                let path = dir.join(format!("{}.json", instance.instance_id()));
                write(&path, &text)?;
                println!("{}", path.display());
            }
            None => print!("{text}"),
        }
    }
    Ok(0)
}

fn solve(cli: &Cli, args: &SolveArgs) -> CmdResult {
    let instance =
        instance_from_str(&read(&args.instance)?).map_err(|e| runtime(format!("{}: {e}", args.instance.display())))?;
    let budget = args.node_budget.unwrap_or(load_config(cli)?.node_budget);
    let r = solve_optimal(&instance, budget);
    let summary = serde_json::json!({
        "instance_id": instance.instance_id(),
        "status": r.status,
        "makespan": r.makespan,
        "nodes_explored": r.nodes_explored,
        "witness": r.witness,
    });
    print!("{}", to_canonical_json(&summary));
    eprintln!("{:?} after {} nodes in {:.3}s", r.status, r.nodes_explored, r.elapsed.as_secs_f64());
    if let (Some(path), Some(w)) = (&cli.out, &r.witness) {
        write(path, &schedule_to_string(w))?;
    }
    if args.require_optimal_witness && r.status != SolveStatus::Optimal {
        return Err(runtime(format!("no optimal witness: solver returned {:?}", r.status)));
    }
    Ok(0)
}

fn verify_cmd(cli: &Cli, args: &VerifyArgs) -> CmdResult {
    let instance =
        instance_from_str(&read(&args.instance)?).map_err(|e| runtime(format!("{}: {e}", args.instance.display())))?;
    let schedule =
        schedule_from_str(&read(&args.schedule)?).map_err(|e| runtime(format!("{}: {e}", args.schedule.display())))?;
    let oracle = if args.optimal {
        let r = solve_optimal(&instance, load_config(cli)?.node_budget);
        Some(r.makespan.filter(|_| r.is_optimal()).ok_or_else(|| runtime(format!("solver returned {:?}", r.status)))?)
    } else {
        None
    };
    let verdict = verify(&instance, &schedule, oracle);
    if verdict.feasible {
        let m = verdict.makespan.unwrap_or_default();
        match (verdict.optimal, oracle) {
            (Some(true), _) => println!("feasible, makespan {m} (optimal)"),
            (Some(false), Some(o)) => println!("feasible, makespan {m} (optimum {o})"),
            _ => println!("feasible, makespan {m}"),
        }
        return Ok(0);
    }
    for v in &verdict.violations {
        println!("{}", describe_violation(v));
    }
    Ok(if args.strict { EXIT_INFEASIBLE } else { 0 })
}

fn run_cmd(cli: &Cli, args: &RunArgs) -> CmdResult {
    let mut config = load_config(cli)?;
    if !cli.seed.is_empty() {
        config.seeds = cli.seed.clone();
    }
    if let Some(v) = args.iterations {
        config.iterations = v;
    }
    if let Some(v) = args.rollouts {
        config.rollouts_per_iteration = v;
    }
    if let Some(v) = args.temperature {
        config.temperature = v;
    }
    if let Some(v) = args.node_budget {
        config.node_budget = v;
    }
    if let Some(v) = args.fixed_pool {
        config.fixed_pool = Some(v);
    }
    if let Some(v) = args.n {
        config.eval.problems_per_tier = v;
    }
    if !args.condition.is_empty() {
        config.eval.conditions = args
            .condition
            .iter()
            .map(|c| c.parse::<ConditionKind>().map_err(|e| usage(format!("--condition: {e}"))))
            .collect::<Result<_, _>>()?;
    }
    config.ablations.no_buffer |= args.no_buffer;
    config.ablations.no_cot |= args.no_cot;
    config.dedup |= args.dedup;
    if args.optimal_required {
        config.correctness = verisched::verify::Correctness::OptimalRequired;
    }
    config.validate().map_err(|e| usage(format!("invalid configuration: {e}")))?;
    if args.parallel == 0 {
        return Err(usage("--parallel must be positive"));
    }
    let spec = agent_spec(&args.agent)?;
    let out = cli.out.clone().ok_or_else(|| usage("--out is required (or set VERISCHED_OUT)"))?;
    let timeout = Duration::from_millis(config.timeout_ms);
    let skills = config.skills.clone();
    let factory =
        |_seed: u64, catalog: Arc<Catalog>| connect(&spec, catalog as Arc<dyn InstanceLookup>, &skills, timeout);
    eprintln!(
        "running {} iteration(s) x {} rollouts on seeds {:?} with {spec}",
        config.iterations, config.rollouts_per_iteration, config.seeds
    );
    let report = run(&config, &factory, &out, args.parallel).map_err(runtime)?;
    print!("{}", render_summary(&report));
    eprintln!("wrote {}", out.display());
    Ok(0)
}

fn eval_cmd(cli: &Cli, args: &EvalArgs) -> CmdResult {
    let config = load_config(cli)?;
    let kind: ConditionKind = args.condition.parse().map_err(|e| usage(format!("--condition: {e}")))?;
    let tiers = match &args.tiers {
        Some(t) => parse_tiers(t)?,
        None => config.all_tiers(),
    };
    if let Some(t) = tiers.iter().find(|t| !config.tiers.iter().any(|s| s.tier == **t)) {
        return Err(usage(format!("--tiers: no tier {t}")));
    }
    let n = args.n.unwrap_or(config.eval.problems_per_tier);
    if n == 0 {
        return Err(usage("--n must be positive"));
    }
    let spec = agent_spec(&args.agent)?;
    let catalog = Arc::new(config.catalog());
    let agent =
        connect(&spec, catalog.clone(), &config.skills, Duration::from_millis(config.timeout_ms)).map_err(runtime)?;
    let condition = EvalCondition::new(kind, !(args.no_cot || config.ablations.no_cot));
    let ev = Evaluator {
        catalog: &catalog,
        correctness: config.correctness,
        temperature: config.eval.temperature,
        max_tokens: config.max_tokens,
        eval_seed: single_seed(cli)?.unwrap_or(0),
        iteration: 0,
        parallel: args.parallel.max(1),
    };
    let evals = ev.eval_per_tier(agent.as_ref(), condition, &tiers, n);
    if let Some(dir) = &cli.out {
        write(&dir.join(format!("{}.json", condition.to_string().replace(':', "-"))), &to_canonical_json(&evals))?;
    }
    println!("condition: {condition}");
    println!("tier  problems  correct  accuracy  agent-failures");
    for e in &evals {
        println!(
            "{:>4}  {:>8}  {:>7}  {:>8.3}  {:>14}",
            format!("T{}", e.tier),
            e.problems,
            e.correct,
            e.accuracy,
            e.agent_failures
        );
    }
    Ok(0)
}

fn report_cmd(args: &ReportArgs) -> CmdResult {
    let report = regenerate_report(&args.run).map_err(runtime)?;
    match args.format {
        Format::Table => print!("{}", render_summary(&report)),
        Format::Structured => print!("{}", to_canonical_json(&report)),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let result = match &cli.command {
        Command::Gen(a) => gen(&cli, a),
        Command::Solve(a) => solve(&cli, a),
        Command::Verify(a) => verify_cmd(&cli, a),
        Command::Run(a) => run_cmd(&cli, a),
        Command::Eval(a) => eval_cmd(&cli, a),
        Command::Report(a) => report_cmd(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            let mut cmd = Cli::command();
            cmd.build();
            if let Some(sub) = cmd.find_subcommand_mut(subcommand_name(&cli.command)) {
                eprintln!("{}", sub.render_usage());
            }
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Gen(_) => "gen",
        Command::Solve(_) => "solve",
        Command::Verify(_) => "verify",
        Command::Run(_) => "run",
        Command::Eval(_) => "eval",
        Command::Report(_) => "report",
    }
}
