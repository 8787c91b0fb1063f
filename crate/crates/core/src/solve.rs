//! Limits, outcomes and the final selection step shared by both solvers.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fairness::{filter_fair, FairnessConfig};
use crate::mapio::InstanceSpec;
use crate::plan::JointPlan;
use crate::sassp::{shortest_steps, SearchError};

/// Cooperative wall-clock budget; solvers poll it at node boundaries.
#[derive(Debug, Clone, Copy)]
pub struct Deadline {
    started: Instant,
    at: Option<Instant>,
}

impl Deadline {
    pub fn after(limit: Option<Duration>) -> Self {
        let started = Instant::now();
        Self { started, at: limit.and_then(|d| started.checked_add(d)) }
    }

    pub fn never() -> Self {
        Self::after(None)
    }

    pub fn expired(&self) -> bool {
        self.at.is_some_and(|at| Instant::now() >= at)
    }

    pub fn elapsed(&self) -> Duration {
        self.started.elapsed()
    }
}

/// Budgets for one solve call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveLimits {
    /// Wall-clock budget; `None` runs to completion.
    pub time_limit: Option<Duration>,
    /// Largest IDA* cost bound to try.
    pub max_bound: f64,
    /// Joint plans streamed out of one step vector before giving up.
    pub max_plans_per_node: u64,
    /// Constraint-tree nodes expanded before giving up.
    pub max_ct_nodes: u64,
    /// Extra timesteps over the shortest distance any agent may take;
    /// `None` means twice the map's width plus height.
    pub max_extra_steps: Option<usize>,
    /// Absolute cap on any agent's path length.
    pub max_agent_steps: Option<usize>,
    /// Keep every conflict-free joint plan of a step vector, not just the first.
    pub collect_all_plans: bool,
    /// Keep deepening after the accumulator becomes nonempty, until every
    /// step vector within the caps has been seen.
    pub exhaustive_bounds: bool,
    /// Lower bound on remaining cost used by Fair-ICTS.
    pub icts_heuristic: HeuristicKind,
}

impl Default for SolveLimits {
    fn default() -> Self {
        Self {
            time_limit: Some(Duration::from_secs(60)),
            max_bound: f64::INFINITY,
            max_plans_per_node: 1_000_000,
            max_ct_nodes: 100_000,
            max_extra_steps: None,
            max_agent_steps: None,
            collect_all_plans: false,
            exhaustive_bounds: false,
            icts_heuristic: HeuristicKind::EnvyGap,
        }
    }
}

impl SolveLimits {
    pub fn with_time_limit(mut self, limit: Option<Duration>) -> Self {
        self.time_limit = limit;
        self
    }

    /// Per-agent path-length caps for `instance`, given each agent's shortest distance.
    pub fn step_caps(&self, instance: &InstanceSpec, shortest: &[usize]) -> Vec<usize> {
        let map = &instance.map;
        let extra = self.max_extra_steps.unwrap_or(2 * (map.width() + map.height()));
        shortest
            .iter()
            .map(|&d| {
                let cap = d.saturating_add(extra);
                self.max_agent_steps.map_or(cap, |m| cap.min(m))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeuristicKind {
    Zero,
    #[default]
    EnvyGap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Icts,
    Cbs,
    Oracle,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Icts => "icts",
            Self::Cbs => "cbs",
            Self::Oracle => "oracle",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Solved,
    NoFairPlan,
    Timeout,
    /// A node or plan cap cut the search short.
    Truncated,
}

impl SolveStatus {
    pub fn name(self) -> &'static str {
        match self {
            Self::Solved => "solved",
            Self::NoFairPlan => "no-fair-plan",
            Self::Timeout => "timeout",
            Self::Truncated => "truncated",
        }
    }

    /// The search covered its whole space, so the answer is exact.
    pub fn is_complete(self) -> bool {
        matches!(self, Self::Solved | Self::NoFairPlan)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("agent {agent}: {source}")]
    Unreachable { agent: usize, source: SearchError },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolveStats {
    /// Cost bounds tried, in order (Fair-ICTS only).
    pub bounds: Vec<f64>,
    /// Search nodes expanded: step vectors or constraint-tree nodes.
    pub nodes_expanded: u64,
    /// Search nodes generated.
    pub nodes_generated: u64,
    /// Joint-DAG expansions (Fair-ICTS) or low-level replans (Fair-CBS).
    pub low_level_calls: u64,
    /// Denominators raised to the welfare floor during proportional filtering.
    pub clamp_events: usize,
    /// Sum of shortest-path costs, the cost of the unconstrained root.
    pub base_cost: f64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub algorithm: Algorithm,
    pub status: SolveStatus,
    pub plan: Option<JointPlan>,
    pub welfare: Option<Vec<f64>>,
    pub social_welfare: Option<f64>,
    /// Every envy-free conflict-free plan found, in discovery order.
    pub candidates: Vec<JointPlan>,
    /// The candidates surviving the max-min and proportional filters.
    pub fair_plans: Vec<JointPlan>,
    pub stats: SolveStats,
}

impl SolveResult {
    /// Max minus min welfare of the returned plan.
    pub fn welfare_spread(&self) -> Option<f64> {
        let w = self.welfare.as_ref()?;
        let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
        Some(hi - lo)
    }
}

/// Shortest distance for every agent, failing on the first unreachable goal.
pub fn shortest_distances(instance: &InstanceSpec) -> Result<Vec<usize>, SolveError> {
    instance
        .agents
        .iter()
        .map(|a| {
            shortest_steps(&instance.map, a.start, a.goal)
                .map_err(|source| SolveError::Unreachable { agent: a.id, source })
        })
        .collect()
}

/// Filters the accumulator and picks the welfare maximizer (first one on ties).
///
/// `status` is the search outcome; a completed search whose filtered set is
/// empty becomes [`SolveStatus::NoFairPlan`]. Plans are only returned for
/// complete searches.
pub fn finalize(
    algorithm: Algorithm,
    status: SolveStatus,
    instance: &InstanceSpec,
    fairness: &FairnessConfig,
    candidates: Vec<JointPlan>,
    mut stats: SolveStats,
    deadline: &Deadline,
) -> SolveResult {
    let welfares: Vec<Vec<f64>> = candidates.iter().map(|p| p.welfares(&instance.agents).0).collect();
    let filtered = filter_fair(&welfares, fairness);
    stats.clamp_events = filtered.clamp_events;
    let fair_plans: Vec<JointPlan> = filtered.kept.iter().map(|&i| candidates[i].clone()).collect();
    let mut best: Option<(usize, f64)> = None;
    for &i in &filtered.kept {
        let sw: f64 = welfares[i].iter().sum();
        if best.is_none_or(|(_, b)| sw > b) {
            best = Some((i, sw));
        }
    }
    let status = match (status, best) {
        (SolveStatus::Solved | SolveStatus::NoFairPlan, Some(_)) => SolveStatus::Solved,
        (SolveStatus::Solved | SolveStatus::NoFairPlan, None) => SolveStatus::NoFairPlan,
        (other, _) => other,
    };
    let chosen = best.filter(|_| status == SolveStatus::Solved);
    stats.runtime_s = deadline.elapsed().as_secs_f64();
    SolveResult {
        algorithm,
        status,
        plan: chosen.map(|(i, _)| candidates[i].clone()),
        welfare: chosen.map(|(i, _)| welfares[i].clone()),
        social_welfare: chosen.map(|(_, sw)| sw),
        candidates,
        fair_plans,
        stats,
    }
}
