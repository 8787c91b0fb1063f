//! Randomized experiments: repeated solves per (algorithm, agent count,
//! epsilon), success fractions, runtime statistics, CSV/JSON output.
//!
//! Instance seeds depend only on the master seed, the agent count and the run
//! index, so every algorithm and every epsilon sees the same instances.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbs::fair_cbs_solve_with;
use crate::fairness::FairnessConfig;
use crate::grid::GridGraph;
use crate::icts::fair_icts_solve_with;
use crate::mapio::{agents_from_scenario, parse_map, parse_scen, sample_agents, InstanceSpec, ParseError, ScenarioEntry};
use crate::solve::{Algorithm, SolveLimits, SolveStatus};

pub const CSV_HEADER: [&str; 9] =
    ["map", "algorithm", "agents", "epsilon", "run", "status", "runtime_s", "social_welfare", "welfare_spread"];

/// Runs over the limit by more than this fraction are flagged.
const OVERRUN_SLACK: f64 = 0.10;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// A loaded map plus an optional scenario to draw endpoints from.
#[derive(Debug, Clone)]
pub struct BenchMap {
    pub name: String,
    pub grid: GridGraph,
    pub scenario: Option<Vec<ScenarioEntry>>,
}

impl BenchMap {
    pub fn load(map: &Path, scen: Option<&Path>) -> Result<Self, BenchError> {
        let read = |p: &Path| std::fs::read(p).map_err(|source| BenchError::Io { path: p.to_path_buf(), source });
        let grid = parse_map(&read(map)?).map_err(|source| BenchError::Parse { path: map.to_path_buf(), source })?;
        let scenario = scen
            .map(|s| parse_scen(&read(s)?).map_err(|source| BenchError::Parse { path: s.to_path_buf(), source }))
            .transpose()?;
        let name = map.file_stem().map_or_else(|| "map".into(), |s| s.to_string_lossy().into_owned());
        Ok(Self { name, grid, scenario })
    }

    pub fn from_grid(name: impl Into<String>, grid: GridGraph) -> Self {
        Self { name: name.into(), grid, scenario: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub agent_counts: Vec<usize>,
    pub runs: usize,
    pub time_limit_s: f64,
    pub epsilons: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub seed: u64,
    pub workers: usize,
    /// Which set-relative filters are on; envy-freeness is controlled by `envy`.
    pub envy: bool,
    pub max_min: bool,
    pub proportional: bool,
}

impl BenchConfig {
    /// 25 runs per setting with a 10 s limit.
    pub fn desk() -> Self {
        Self {
            agent_counts: vec![2, 4, 8],
            runs: 25,
            time_limit_s: 10.0,
            epsilons: vec![0.1, 0.5, 1.0],
            algorithms: vec![Algorithm::Icts, Algorithm::Cbs],
            seed: 0,
            workers: 1,
            envy: true,
            max_min: true,
            proportional: true,
        }
    }

    /// 100 runs per setting with a 60 s limit.
    pub fn paper() -> Self {
        Self { runs: 100, time_limit_s: 60.0, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let fail = |m: &str| Err(BenchError::Config(m.into()));
        if self.runs == 0 {
            return fail("runs must be at least 1");
        }
        if !(self.time_limit_s > 0.0) {
            return fail("time limit must be positive");
        }
        if self.agent_counts.is_empty() || self.agent_counts.contains(&0) {
            return fail("agent counts must be a nonempty list of positive integers");
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e >= 0.0)) {
            return fail("epsilons must be a nonempty list of nonnegative numbers");
        }
        if self.algorithms.is_empty() || self.algorithms.contains(&Algorithm::Oracle) {
            return fail("algorithms must be a nonempty subset of icts, cbs");
        }
        Ok(())
    }

    pub fn fairness(&self, epsilon: f64) -> FairnessConfig {
        FairnessConfig { envy: self.envy, max_min: self.max_min, proportional: self.proportional, ..FairnessConfig::new(epsilon) }
    }

    pub fn limits(&self) -> SolveLimits {
        SolveLimits::default().with_time_limit(Some(Duration::from_secs_f64(self.time_limit_s)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Solved,
    NoFairPlan,
    Timeout,
    Truncated,
    Error,
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            Self::Solved => "solved",
            Self::NoFairPlan => "no-fair-plan",
            Self::Timeout => "timeout",
            Self::Truncated => "truncated",
            Self::Error => "error",
        }
    }
}

impl From<SolveStatus> for RunStatus {
    fn from(s: SolveStatus) -> Self {
        match s {
            SolveStatus::Solved => Self::Solved,
            SolveStatus::NoFairPlan => Self::NoFairPlan,
            SolveStatus::Timeout => Self::Timeout,
            SolveStatus::Truncated => Self::Truncated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub map: String,
    pub algorithm: Algorithm,
    pub agents: usize,
    pub epsilon: f64,
    pub run: usize,
    pub status: RunStatus,
    pub runtime_s: f64,
    pub social_welfare: Option<f64>,
    pub welfare_spread: Option<f64>,
    /// Runtime exceeded the limit by more than 10%.
    pub overrun: bool,
}

/// Seed of run `run` with `agents` agents; SplitMix64 finalizer over the inputs.
pub fn instance_seed(master: u64, agents: usize, run: usize) -> u64 {
    let mut z = master
        ^ (agents as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (run as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The instance solved in run `run` with `agents` agents at tolerance `epsilon`.
pub fn bench_instance(
    map: &BenchMap,
    agents: usize,
    run: usize,
    master: u64,
    epsilon: f64,
) -> Result<InstanceSpec, String> {
    let seed = instance_seed(master, agents, run);
    let types = match &map.scenario {
        Some(entries) => {
            let mut rows = entries.clone();
            rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            agents_from_scenario(&map.grid, &rows, agents, seed)
        }
        None => sample_agents(&map.grid, agents, seed),
    }
    .map_err(|e| e.to_string())?;
    InstanceSpec::new(map.grid.clone(), types, seed, epsilon).map_err(|e| e.to_string())
}

struct Task {
    algorithm: Algorithm,
    agents: usize,
    epsilon: f64,
    run: usize,
}

fn run_one(map: &BenchMap, config: &BenchConfig, task: &Task) -> BenchRecord {
    let started = Instant::now();
    let outcome = bench_instance(map, task.agents, task.run, config.seed, task.epsilon).and_then(|inst| {
        let fairness = config.fairness(task.epsilon);
        let limits = config.limits();
        match task.algorithm {
            Algorithm::Icts => fair_icts_solve_with(&inst, &limits, &fairness),
            _ => fair_cbs_solve_with(&inst, &limits, &fairness),
        }
        .map_err(|e| e.to_string())
    });
    let runtime_s = started.elapsed().as_secs_f64();
    let (status, social_welfare, welfare_spread) = match &outcome {
        Ok(r) => (RunStatus::from(r.status), r.social_welfare, r.welfare_spread()),
        Err(_) => (RunStatus::Error, None, None),
    };
    BenchRecord {
        map: map.name.clone(),
        algorithm: task.algorithm,
        agents: task.agents,
        epsilon: task.epsilon,
        run: task.run,
        status,
        runtime_s,
        social_welfare,
        welfare_spread,
        overrun: runtime_s > config.time_limit_s * (1.0 + OVERRUN_SLACK),
    }
}

/// One record per (algorithm, agent count, epsilon, run), in that order.
pub fn run_benchmark(map: &BenchMap, config: &BenchConfig) -> Result<Vec<BenchRecord>, BenchError> {
    config.validate()?;
    let mut tasks = Vec::new();
    for &algorithm in &config.algorithms {
        for &agents in &config.agent_counts {
            for &epsilon in &config.epsilons {
                for run in 0..config.runs {
                    tasks.push(Task { algorithm, agents, epsilon, run });
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| BenchError::Config(e.to_string()))?;
    Ok(pool.install(|| tasks.par_iter().map(|t| run_one(map, config, t)).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: Algorithm,
    pub agents: usize,
    pub epsilon: f64,
    pub runs: usize,
    pub solved: usize,
    pub success_fraction: f64,
    /// Over all runs; timed-out runs count as the time limit.
    pub mean_runtime_s: f64,
    pub median_runtime_s: f64,
    /// Over solved runs only; `None` when nothing was solved.
    pub mean_runtime_solved_s: Option<f64>,
    pub median_runtime_solved_s: Option<f64>,
    pub mean_social_welfare: Option<f64>,
    pub overruns: usize,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Groups by (algorithm, agents, epsilon) in first-appearance order.
/// `time_limit_s` replaces the runtime of timed-out runs.
pub fn summarize(records: &[BenchRecord], time_limit_s: f64) -> Vec<SummaryRow> {
    let mut keys: Vec<(Algorithm, usize, u64)> = Vec::new();
    for r in records {
        let k = (r.algorithm, r.agents, r.epsilon.to_bits());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(algorithm, agents, eps)| {
            let group: Vec<&BenchRecord> = records
                .iter()
                .filter(|r| r.algorithm == algorithm && r.agents == agents && r.epsilon.to_bits() == eps)
                .collect();
            let all: Vec<f64> = group
                .iter()
                .map(|r| if r.status == RunStatus::Timeout { time_limit_s } else { r.runtime_s })
                .collect();
            let solved: Vec<&&BenchRecord> = group.iter().filter(|r| r.status == RunStatus::Solved).collect();
            let solved_rt: Vec<f64> = solved.iter().map(|r| r.runtime_s).collect();
            let sw: Vec<f64> = solved.iter().filter_map(|r| r.social_welfare).collect();
            SummaryRow {
                algorithm,
                agents,
                epsilon: f64::from_bits(eps),
                runs: group.len(),
                solved: solved.len(),
                success_fraction: solved.len() as f64 / group.len() as f64,
                mean_runtime_s: mean(&all).unwrap_or(0.0),
                median_runtime_s: median(&all).unwrap_or(0.0),
                mean_runtime_solved_s: mean(&solved_rt),
                median_runtime_solved_s: median(&solved_rt),
                mean_social_welfare: mean(&sw),
                overruns: group.iter().filter(|r| r.overrun).count(),
            }
        })
        .collect()
}

/// One line of a figure panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub panel: String,
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Success fraction and mean runtime against agent count (one line per
/// algorithm and epsilon), and success fraction against epsilon (one line per
/// algorithm and agent count).
pub fn plot_data(summary: &[SummaryRow]) -> Vec<PlotSeries> {
    let mut out = Vec::new();
    let mut lines: Vec<(Algorithm, u64)> = Vec::new();
    for s in summary {
        if !lines.contains(&(s.algorithm, s.epsilon.to_bits())) {
            lines.push((s.algorithm, s.epsilon.to_bits()));
        }
    }
    for (panel, pick) in [
        ("success_vs_agents", (|s: &SummaryRow| s.success_fraction) as fn(&SummaryRow) -> f64),
        ("runtime_vs_agents", |s: &SummaryRow| s.mean_runtime_s),
    ] {
        for &(alg, eps) in &lines {
            let rows: Vec<&SummaryRow> =
                summary.iter().filter(|s| s.algorithm == alg && s.epsilon.to_bits() == eps).collect();
            out.push(PlotSeries {
                panel: panel.into(),
                label: format!("{alg} eps={}", f64::from_bits(eps)),
                x: rows.iter().map(|s| s.agents as f64).collect(),
                y: rows.iter().map(|s| pick(s)).collect(),
            });
        }
    }
    let mut by_agents: Vec<(Algorithm, usize)> = Vec::new();
    for s in summary {
        if !by_agents.contains(&(s.algorithm, s.agents)) {
            by_agents.push((s.algorithm, s.agents));
        }
    }
    for (alg, n) in by_agents {
        let rows: Vec<&SummaryRow> = summary.iter().filter(|s| s.algorithm == alg && s.agents == n).collect();
        out.push(PlotSeries {
            panel: "success_vs_epsilon".into(),
            label: format!("{alg} agents={n}"),
            x: rows.iter().map(|s| s.epsilon).collect(),
            y: rows.iter().map(|s| s.success_fraction).collect(),
        });
    }
    out
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// Writes the records as CSV with the fixed header.
pub fn write_csv<W: Write>(records: &[BenchRecord], out: W) -> Result<(), BenchError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.map.clone(),
            r.algorithm.name().to_string(),
            r.agents.to_string(),
            r.epsilon.to_string(),
            r.run.to_string(),
            r.status.name().to_string(),
            format!("{:.6}", r.runtime_s),
            opt(r.social_welfare),
            opt(r.welfare_spread),
        ])?;
    }
    w.flush().map_err(|e| BenchError::Csv(e.into()))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub records: Vec<BenchRecord>,
    pub summary: Vec<SummaryRow>,
    pub plots: Vec<PlotSeries>,
}

impl BenchReport {
    pub fn new(config: BenchConfig, records: Vec<BenchRecord>) -> Self {
        let summary = summarize(&records, config.time_limit_s);
        let plots = plot_data(&summary);
        Self { config, records, summary, plots }
    }
}
