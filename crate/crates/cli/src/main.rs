//! `fairmapf`: solve, benchmark, oracle-check and mechanism front end.
//!
//! Exit codes: 0 success, 1 usage or IO error, 2 no fair plan, 3 timeout or
//! truncated search, 4 failed check (mechanism violations, oracle disagreement).

use std::fs;
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fairmapf::bench::{run_benchmark, write_csv, BenchConfig, BenchMap, BenchReport};
use fairmapf::cbs::fair_cbs_solve_with;
use fairmapf::icts::fair_icts_solve_with;
use fairmapf::mapio::{agents_from_scenario, sample_agents};
use fairmapf::mechanism::{certify_truthfulness, planted_non_monotone_fixture, run_mechanism, BidProfile};
use fairmapf::oracle::{self, check_relative, oracle_fair_optimum, OracleFairness};
use fairmapf::{Algorithm, FairnessConfig, GridGraph, InstanceSpec, JointPlan, SolveLimits, SolveResult, SolveStatus};
use serde::Deserialize;
use serde_json::{json, Value};

const EXIT_USAGE: u8 = 1;
const EXIT_NO_FAIR_PLAN: u8 = 2;
const EXIT_INCOMPLETE: u8 = 3;
const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "fairmapf", version, about = "Fair multi-agent path finding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and print the result as JSON.
    Solve(SolveArgs),
    /// Run repeated randomized solves and write records, summary and plot data.
    Bench(BenchArgs),
    /// Compare solver answers with the brute-force oracle on small instances.
    OracleCheck(OracleArgs),
    /// Solve, run the payment mechanism at truthful bids and certify it.
    Mechanism(MechanismArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum AlgoChoice {
    Icts,
    Cbs,
    Both,
}

impl AlgoChoice {
    fn algorithms(self) -> Vec<Algorithm> {
        match self {
            Self::Icts => vec![Algorithm::Icts],
            Self::Cbs => vec![Algorithm::Cbs],
            Self::Both => vec![Algorithm::Icts, Algorithm::Cbs],
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Preset {
    Desk,
    Paper,
}

/// Flags shared by every subcommand that builds one instance.
#[derive(Args, Clone, Default)]
struct InstanceArgs {
    /// Grid map file.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Scenario file; agents take its rows in order.
    #[arg(long)]
    scen: Option<PathBuf>,
    /// Number of agents.
    #[arg(long)]
    agents: Option<usize>,
    /// Envy tolerance.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Fairness filters to apply, any of envy, maxmin, prop.
    #[arg(long, value_delimiter = ',')]
    fairness: Option<Vec<FairnessChoice>>,
    /// Wall-clock limit per solve, in seconds.
    #[arg(long = "time-limit")]
    time_limit: Option<f64>,
    /// Seed for agent sampling and any other randomness.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML file supplying defaults for any flag.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the result here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum FairnessChoice {
    Envy,
    Maxmin,
    Prop,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, value_enum)]
    algo: Option<AlgoChoice>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long)]
    scen: Option<PathBuf>,
    /// Agent counts, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    agents: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    algo: Option<AlgoChoice>,
    /// Envy tolerances, comma separated.
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    fairness: Option<Vec<FairnessChoice>>,
    #[arg(long = "time-limit")]
    time_limit: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Runs per (algorithm, agents, epsilon) setting.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Starting point for every setting not given elsewhere.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Format of the records file.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, value_enum)]
    algo: Option<AlgoChoice>,
    /// Longest path any agent may take, for solvers and oracle alike.
    #[arg(long)]
    horizon: Option<usize>,
    /// Instances to check; run k uses seed + k.
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Args)]
struct MechanismArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, value_enum)]
    algo: Option<AlgoChoice>,
    /// Misreports sampled per agent.
    #[arg(long)]
    samples: Option<usize>,
    /// Certify the built-in non-monotone plan set instead of solving.
    #[arg(long, hide = true)]
    planted_fixture: bool,
}

/// Keys accepted in a `--config` TOML file. Flags override them.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    map: Option<PathBuf>,
    scen: Option<PathBuf>,
    agents: Option<AgentsValue>,
    algo: Option<AlgoChoice>,
    epsilon: Option<f64>,
    epsilons: Option<Vec<f64>>,
    fairness: Option<Vec<FairnessChoice>>,
    time_limit: Option<f64>,
    seed: Option<u64>,
    runs: Option<usize>,
    workers: Option<usize>,
    preset: Option<Preset>,
    out: Option<PathBuf>,
    format: Option<Format>,
    samples: Option<usize>,
    horizon: Option<usize>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AgentsValue {
    One(usize),
    Many(Vec<usize>),
}

impl AgentsValue {
    fn one(&self) -> Result<usize, Failure> {
        match self {
            Self::One(n) => Ok(*n),
            Self::Many(v) if v.len() == 1 => Ok(v[0]),
            Self::Many(_) => Err(Failure::usage("config `agents` must be a single number here")),
        }
    }

    fn many(&self) -> Vec<usize> {
        match self {
            Self::One(n) => vec![*n],
            Self::Many(v) => v.clone(),
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }
}

type Outcome = Result<u8, Failure>;

fn load_config(path: Option<&PathBuf>) -> Result<FileConfig, Failure> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn fairness_config(epsilon: f64, choice: Option<&[FairnessChoice]>) -> FairnessConfig {
    let base = FairnessConfig::new(epsilon);
    match choice {
        None => base,
        Some(c) => FairnessConfig {
            envy: c.contains(&FairnessChoice::Envy),
            max_min: c.contains(&FairnessChoice::Maxmin),
            proportional: c.contains(&FairnessChoice::Prop),
            ..base
        },
    }
}

fn time_limit(seconds: Option<f64>, default: f64) -> Result<Duration, Failure> {
    let s = seconds.unwrap_or(default);
    if s > 0.0 && s.is_finite() {
        Ok(Duration::from_secs_f64(s))
    } else {
        Err(Failure::usage(format!("time limit must be a positive number of seconds, got {s}")))
    }
}

/// One instance plus the settings for solving it, after merging flags,
/// config file and defaults.
struct Resolved {
    instance: InstanceSpec,
    fairness: FairnessConfig,
    limits: SolveLimits,
    algo: AlgoChoice,
    out: Option<PathBuf>,
    map_name: String,
}

fn resolve(args: &InstanceArgs, file: &FileConfig, algo: Option<AlgoChoice>, seed_offset: u64) -> Result<Resolved, Failure> {
    let map_path = args.map.clone().or_else(|| file.map.clone()).ok_or_else(|| Failure::usage("--map is required"))?;
    let scen_path = args.scen.clone().or_else(|| file.scen.clone());
    let bench_map = BenchMap::load(&map_path, scen_path.as_deref()).map_err(|e| Failure::usage(e.to_string()))?;
    let agents = match args.agents {
        Some(n) => n,
        None => file.agents.as_ref().map(AgentsValue::one).transpose()?.unwrap_or(2),
    };
    let seed = args.seed.or(file.seed).unwrap_or(0) + seed_offset;
    let epsilon = args.epsilon.or(file.epsilon).unwrap_or(0.5);
    let types = match &bench_map.scenario {
        Some(entries) => agents_from_scenario(&bench_map.grid, entries, agents, seed),
        None => sample_agents(&bench_map.grid, agents, seed),
    }
    .map_err(|e| Failure::usage(e.to_string()))?;
    let instance = InstanceSpec::new(bench_map.grid, types, seed, epsilon).map_err(|e| Failure::usage(e.to_string()))?;
    let fairness = fairness_config(epsilon, args.fairness.as_deref().or(file.fairness.as_deref()));
    let limits = SolveLimits::default().with_time_limit(Some(time_limit(args.time_limit.or(file.time_limit), 60.0)?));
    Ok(Resolved {
        instance,
        fairness,
        limits,
        algo: algo.or(file.algo).unwrap_or(AlgoChoice::Icts),
        out: args.out.clone().or_else(|| file.out.clone()),
        map_name: bench_map.name,
    })
}

fn solve_one(algorithm: Algorithm, instance: &InstanceSpec, limits: &SolveLimits, fairness: &FairnessConfig) -> Result<SolveResult, Failure> {
    match algorithm {
        Algorithm::Cbs => fair_cbs_solve_with(instance, limits, fairness),
        _ => fair_icts_solve_with(instance, limits, fairness),
    }
    .map_err(|e| Failure::usage(e.to_string()))
}

fn coords(map: &GridGraph, plan: &JointPlan) -> Value {
    plan.paths
        .iter()
        .map(|p| p.vertices().iter().map(|&v| {
            let (x, y) = map.coords(v);
            json!([x, y])
        }).collect::<Vec<_>>())
        .collect()
}

fn instance_json(instance: &InstanceSpec, map_name: &str) -> Value {
    let map = &instance.map;
    json!({
        "map": map_name,
        "width": map.width(),
        "height": map.height(),
        "seed": instance.seed,
        "epsilon": instance.epsilon,
        "agents": instance.agents.iter().map(|a| json!({
            "id": a.id,
            "start": map.coords(a.start),
            "goal": map.coords(a.goal),
            "utility": a.utility,
            "step_cost": a.step_cost,
        })).collect::<Vec<_>>(),
    })
}

fn result_json(instance: &InstanceSpec, r: &SolveResult) -> Value {
    json!({
        "algorithm": r.algorithm,
        "status": r.status,
        "plan": r.plan.as_ref().map(|p| coords(&instance.map, p)),
        "welfare": r.welfare,
        "social_welfare": r.social_welfare,
        "welfare_spread": r.welfare_spread(),
        "candidates": r.candidates.len(),
        "fair_plans": r.fair_plans.len(),
        "stats": r.stats,
    })
}

fn status_code(statuses: &[SolveStatus]) -> u8 {
    if statuses.iter().any(|s| matches!(s, SolveStatus::Timeout | SolveStatus::Truncated)) {
        EXIT_INCOMPLETE
    } else if statuses.contains(&SolveStatus::NoFairPlan) {
        EXIT_NO_FAIR_PLAN
    } else {
        0
    }
}

fn emit(out: Option<&FsPath>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::usage(format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| Failure::usage(e.to_string()))
        }
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s
}

fn cmd_solve(args: SolveArgs) -> Outcome {
    let file = load_config(args.instance.config.as_ref())?;
    let r = resolve(&args.instance, &file, args.algo, 0)?;
    let results = r
        .algo
        .algorithms()
        .into_iter()
        .map(|alg| solve_one(alg, &r.instance, &r.limits, &r.fairness))
        .collect::<Result<Vec<_>, _>>()?;
    let text = match args.format.or(file.format).unwrap_or(Format::Json) {
        Format::Json => pretty(&json!({
            "instance": instance_json(&r.instance, &r.map_name),
            "results": results.iter().map(|res| result_json(&r.instance, res)).collect::<Vec<_>>(),
        })),
        Format::Csv => {
            let mut s = String::from("algorithm,status,social_welfare,welfare_spread,runtime_s\n");
            for res in &results {
                let opt = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
                s.push_str(&format!(
                    "{},{},{},{},{:.6}\n",
                    res.algorithm,
                    res.status.name(),
                    opt(res.social_welfare),
                    opt(res.welfare_spread()),
                    res.stats.runtime_s
                ));
            }
            s
        }
    };
    emit(r.out.as_deref(), &text)?;
    Ok(status_code(&results.iter().map(|res| res.status).collect::<Vec<_>>()))
}

fn cmd_bench(args: BenchArgs) -> Outcome {
    let file = load_config(args.config.as_ref())?;
    let mut config = match args.preset.or(file.preset).unwrap_or(Preset::Desk) {
        Preset::Desk => BenchConfig::desk(),
        Preset::Paper => BenchConfig::paper(),
    };
    if let Some(a) = args.agents.clone().or_else(|| file.agents.as_ref().map(AgentsValue::many)) {
        config.agent_counts = a;
    }
    if let Some(algo) = args.algo.or(file.algo) {
        config.algorithms = algo.algorithms();
    }
    if let Some(e) = args.epsilons.clone().or_else(|| file.epsilons.clone()) {
        config.epsilons = e;
    }
    if let Some(t) = args.time_limit.or(file.time_limit) {
        config.time_limit_s = t;
    }
    if let Some(s) = args.seed.or(file.seed) {
        config.seed = s;
    }
    if let Some(r) = args.runs.or(file.runs) {
        config.runs = r;
    }
    if let Some(w) = args.workers.or(file.workers) {
        config.workers = w;
    }
    if let Some(f) = args.fairness.as_deref().or(file.fairness.as_deref()) {
        config.envy = f.contains(&FairnessChoice::Envy);
        config.max_min = f.contains(&FairnessChoice::Maxmin);
        config.proportional = f.contains(&FairnessChoice::Prop);
    }
    config.validate().map_err(|e| Failure::usage(e.to_string()))?;

    let map_path = args.map.clone().or_else(|| file.map.clone()).ok_or_else(|| Failure::usage("--map is required"))?;
    let scen_path = args.scen.clone().or_else(|| file.scen.clone());
    let out = args.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("bench-out"));
    let format = args.format.or(file.format).unwrap_or(Format::Csv);
    let map = BenchMap::load(&map_path, scen_path.as_deref()).map_err(|e| Failure::usage(e.to_string()))?;
    let io = |p: &FsPath, e: std::io::Error| Failure::usage(format!("{}: {e}", p.display()));
    fs::create_dir_all(&out).map_err(|e| io(&out, e))?;
    // Probe writability before spending time on the runs.
    let records_path = out.join(match format {
        Format::Csv => "records.csv",
        Format::Json => "records.json",
    });
    fs::write(&records_path, "").map_err(|e| io(&records_path, e))?;

    let records = run_benchmark(&map, &config).map_err(|e| Failure::usage(e.to_string()))?;
    let report = BenchReport::new(config, records);
    match format {
        Format::Csv => {
            let mut buf = Vec::new();
            write_csv(&report.records, &mut buf).map_err(|e| Failure::usage(e.to_string()))?;
            fs::write(&records_path, buf).map_err(|e| io(&records_path, e))?;
        }
        Format::Json => {
            let text = pretty(&serde_json::to_value(&report.records).expect("records serialize"));
            fs::write(&records_path, text).map_err(|e| io(&records_path, e))?;
        }
    }
    let summary_path = out.join("summary.json");
    let summary = json!({ "config": report.config, "summary": report.summary });
    fs::write(&summary_path, pretty(&summary)).map_err(|e| io(&summary_path, e))?;
    let plots_path = out.join("plots.json");
    fs::write(&plots_path, pretty(&serde_json::to_value(&report.plots).expect("plots serialize")))
        .map_err(|e| io(&plots_path, e))?;

    println!("algorithm agents epsilon runs solved success mean_runtime_s");
    for s in &report.summary {
        println!(
            "{:<9} {:>6} {:>7} {:>4} {:>6} {:>7.2} {:>14.6}",
            s.algorithm.name(),
            s.agents,
            s.epsilon,
            s.runs,
            s.solved,
            s.success_fraction,
            s.mean_runtime_s
        );
    }
    println!("wrote {} records to {}", report.records.len(), out.display());
    Ok(0)
}

fn cmd_oracle_check(args: OracleArgs) -> Outcome {
    let file = load_config(args.instance.config.as_ref())?;
    let horizon = args.horizon.or(file.horizon).unwrap_or(oracle::MAX_STEPS);
    let runs = args.runs.or(file.runs).unwrap_or(1);
    let mut checks = Vec::new();
    let mut all_agree = true;
    let mut out = None;
    for k in 0..runs as u64 {
        let mut r = resolve(&args.instance, &file, args.algo.or(file.algo).or(Some(AlgoChoice::Both)), k)?;
        r.limits.max_agent_steps = Some(horizon);
        out = r.out.clone();
        let fairness = OracleFairness::from(&r.fairness);
        let full = oracle_fair_optimum(&r.instance, horizon, &fairness).map_err(|e| Failure::usage(e.to_string()))?;
        let mut solvers = Vec::new();
        for alg in r.algo.algorithms() {
            let res = solve_one(alg, &r.instance, &r.limits, &r.fairness)?;
            let rel = check_relative(&r.instance, &res, &fairness);
            let complete = res.status.is_complete();
            let agrees = !complete || rel.agrees_with(&res, 1e-9);
            all_agree &= agrees;
            solvers.push(json!({
                "algorithm": alg,
                "status": res.status,
                "social_welfare": res.social_welfare,
                "r_relative_social_welfare": rel.result.social_welfare,
                "bad_candidates": rel.bad_candidates,
                "agrees": agrees,
                "matches_full_oracle": res.social_welfare.zip(full.result.social_welfare).map_or(
                    res.social_welfare.is_none() && full.result.social_welfare.is_none(),
                    |(a, b)| (a - b).abs() <= 1e-9
                ),
            }));
        }
        checks.push(json!({
            "seed": r.instance.seed,
            "oracle": {
                "status": full.result.status,
                "social_welfare": full.result.social_welfare,
                "unconstrained_optimum": full.unconstrained_optimum,
                "candidates": full.result.candidates.len(),
            },
            "solvers": solvers,
        }));
    }
    emit(out.as_deref(), &pretty(&json!({ "horizon": horizon, "agree": all_agree, "checks": checks })))?;
    Ok(if all_agree { 0 } else { EXIT_CHECK_FAILED })
}

fn cmd_mechanism(args: MechanismArgs) -> Outcome {
    let file = load_config(args.instance.config.as_ref())?;
    let samples = args.samples.or(file.samples).unwrap_or(20);
    let seed = args.instance.seed.or(file.seed).unwrap_or(0);
    let (instance, plans, solve_doc, out) = if args.planted_fixture {
        let (instance, plans) = planted_non_monotone_fixture();
        (instance, plans, Value::Null, args.instance.out.clone().or_else(|| file.out.clone()))
    } else {
        let r = resolve(&args.instance, &file, args.algo, 0)?;
        let alg = r.algo.algorithms()[0];
        let res = solve_one(alg, &r.instance, &r.limits, &r.fairness)?;
        let doc = result_json(&r.instance, &res);
        if res.status != SolveStatus::Solved {
            emit(r.out.as_deref(), &pretty(&json!({ "solve": doc })))?;
            return Ok(status_code(&[res.status]));
        }
        (r.instance, res.fair_plans, doc, r.out)
    };
    let truthful = BidProfile::truthful(&instance.agents);
    let mechanism = match run_mechanism(&plans, &instance.agents, &truthful) {
        Ok(m) => serde_json::to_value(m).expect("outcome serializes"),
        Err(e) => json!({ "error": e.to_string() }),
    };
    let report = certify_truthfulness(&instance, &plans, samples, seed).map_err(|e| Failure::usage(e.to_string()))?;
    let clean = report.is_clean();
    emit(
        out.as_deref(),
        &pretty(&json!({
            "solve": solve_doc,
            "plans": plans.len(),
            "mechanism": mechanism,
            "certificate": report,
            "clean": clean,
        })),
    )?;
    Ok(if clean { 0 } else { EXIT_CHECK_FAILED })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Bench(a) => cmd_bench(a),
        Command::OracleCheck(a) => cmd_oracle_check(a),
        Command::Mechanism(a) => cmd_mechanism(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("fairmapf: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
