//! Fair increasing cost tree search.
//!
//! The high level is an IDA* over step vectors `s = (s_1, ..., s_l)`: the root
//! holds every agent's shortest distance and each child lengthens exactly one
//! agent's path by one step, at cost `c_i`. For every step vector inside the
//! current bound, the low level builds one time-expanded DAG per agent and
//! walks their conflict-pruned product for joint plans.
//!
//! Welfare depends on a plan only through its step vector, so the envy test
//! runs before any DAG is built, and by default only the first conflict-free
//! joint plan of each envy-free step vector enters the accumulator. Every
//! fairness predicate sees welfare vectors only, so this loses nothing; set
//! [`SolveLimits::collect_all_plans`] to keep them all.

mod dag;
mod joint;

use std::collections::{HashMap, HashSet};
use std::ops::ControlFlow;

pub use dag::TimeExpandedDag;
pub use joint::{joint_product_paths, JointDag, WalkEnd};

use crate::fairness::{is_envy_free, FairnessConfig, ENVY_SLACK};
use crate::mapio::InstanceSpec;
use crate::plan::{AgentType, JointPlan, WelfareVector};
use crate::sassp::DistanceTable;
use crate::solve::{
    finalize, shortest_distances, Algorithm, Deadline, HeuristicKind, SolveError, SolveLimits,
    SolveResult, SolveStats, SolveStatus,
};

/// Absolute tolerance when comparing `f` against the depth bound.
pub const BOUND_EPS: f64 = 1e-12;

/// Builds the DAG of every `steps`-step walk of `agent` from start to goal.
pub fn build_dag(map: &crate::grid::GridGraph, agent: &AgentType, steps: usize) -> TimeExpandedDag {
    TimeExpandedDag::build(map, agent, steps)
}

/// What a step-vector heuristic may look at.
#[derive(Debug, Clone)]
pub struct StepProblem<'a> {
    pub agents: &'a [AgentType],
    /// Shortest distance per agent (the root vector).
    pub shortest: &'a [usize],
    /// Largest allowed length per agent.
    pub caps: &'a [usize],
    /// Envy tolerance in force (infinite when envy-freeness is switched off).
    pub epsilon: f64,
}

impl StepProblem<'_> {
    /// Cost above the root: `sum_i (s_i - s_i*) c_i`, computed from scratch so
    /// that equal vectors always get bitwise-equal costs.
    pub fn cost(&self, steps: &[usize]) -> f64 {
        steps
            .iter()
            .zip(self.shortest)
            .zip(self.agents)
            .map(|((&s, &d), a)| (s - d) as f64 * a.step_cost)
            .sum()
    }
}

/// Lower bound on the extra cost from a step vector to any envy-free
/// descendant; `f64::INFINITY` prunes the node for good.
pub trait StepHeuristic {
    fn estimate(&self, problem: &StepProblem<'_>, steps: &[usize]) -> f64;
}

/// `h = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroHeuristic;

impl StepHeuristic for ZeroHeuristic {
    fn estimate(&self, _: &StepProblem<'_>, _: &[usize]) -> f64 {
        0.0
    }
}

/// Lengthening paths only lowers welfare, so the worst-off welfare `m` of a
/// node bounds that of every descendant from above. An envy-free descendant
/// therefore needs every agent at or below `m + epsilon`, which takes at
/// least `ceil((W_i - m - epsilon) / c_i)` more steps from agent `i`.
#[derive(Debug, Clone, Copy, Default)]
pub struct EnvyGapHeuristic;

impl StepHeuristic for EnvyGapHeuristic {
    fn estimate(&self, problem: &StepProblem<'_>, steps: &[usize]) -> f64 {
        if problem.epsilon.is_infinite() {
            return 0.0;
        }
        let w = WelfareVector::from_steps(problem.agents, steps);
        let floor = w.values().iter().copied().fold(f64::INFINITY, f64::min);
        let mut h = 0.0;
        for (i, a) in problem.agents.iter().enumerate() {
            let excess = w.0[i] - floor - problem.epsilon - ENVY_SLACK;
            if excess <= 0.0 {
                continue;
            }
            // Shave a little so rounding never overstates the requirement.
            let need = (excess / a.step_cost * (1.0 - 1e-9)).ceil() as usize;
            if steps[i].saturating_add(need) > problem.caps[i] {
                return f64::INFINITY;
            }
            h += need as f64 * a.step_cost;
        }
        h * (1.0 - 1e-9)
    }
}

/// A step vector with its cost split.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchNode {
    pub steps: Vec<usize>,
    pub g: f64,
    pub h: f64,
}

impl SearchNode {
    pub fn f(&self) -> f64 {
        self.g + self.h
    }
}

/// Result of one bounded pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundOutcome {
    /// The accumulator is nonempty after the pass.
    pub found: bool,
    /// Smallest `f` among nodes cut off by the bound; infinite if none.
    pub min_exceeding: f64,
    /// The pass ended early on the deadline or a plan cap.
    pub interrupted: Option<SolveStatus>,
}

#[derive(Debug, Clone)]
enum Verdict {
    Envious,
    Infeasible,
    Plans(Vec<JointPlan>),
    Truncated(Vec<JointPlan>),
}

/// State of one Fair-ICTS run: the step-vector tree, the accumulator `R`,
/// and a cache of low-level results per step vector.
pub struct IctsSearch<'a> {
    instance: &'a InstanceSpec,
    limits: &'a SolveLimits,
    epsilon: f64,
    shortest: Vec<usize>,
    caps: Vec<usize>,
    to_goal: Vec<DistanceTable>,
    heuristic: &'a dyn StepHeuristic,
    deadline: &'a Deadline,
    verdicts: HashMap<Vec<usize>, Verdict>,
    accumulator: Vec<JointPlan>,
    stats: SolveStats,
}

impl<'a> IctsSearch<'a> {
    pub fn new(
        instance: &'a InstanceSpec,
        limits: &'a SolveLimits,
        epsilon: f64,
        heuristic: &'a dyn StepHeuristic,
        deadline: &'a Deadline,
    ) -> Result<Self, SolveError> {
        let shortest = shortest_distances(instance)?;
        let caps = limits.step_caps(instance, &shortest);
        let to_goal =
            instance.agents.iter().map(|a| DistanceTable::from_source(&instance.map, a.goal)).collect();
        let stats = SolveStats {
            base_cost: instance.agents.iter().zip(&shortest).map(|(a, &d)| d as f64 * a.step_cost).sum(),
            ..SolveStats::default()
        };
        Ok(Self {
            instance,
            limits,
            epsilon,
            shortest,
            caps,
            to_goal,
            heuristic,
            deadline,
            verdicts: HashMap::new(),
            accumulator: Vec::new(),
            stats,
        })
    }

    fn problem(&self) -> StepProblem<'_> {
        StepProblem {
            agents: &self.instance.agents,
            shortest: &self.shortest,
            caps: &self.caps,
            epsilon: self.epsilon,
        }
    }

    fn node(&self, steps: Vec<usize>) -> SearchNode {
        let problem = self.problem();
        let g = problem.cost(&steps);
        let h = self.heuristic.estimate(&problem, &steps);
        SearchNode { steps, g, h }
    }

    pub fn root(&self) -> SearchNode {
        self.node(self.shortest.clone())
    }

    pub fn accumulator(&self) -> &[JointPlan] {
        &self.accumulator
    }

    fn low_level(&mut self, steps: &[usize]) -> Verdict {
        let agents = &self.instance.agents;
        if !is_envy_free(WelfareVector::from_steps(agents, steps).values(), self.epsilon) {
            return Verdict::Envious;
        }
        let dags: Vec<TimeExpandedDag> = agents
            .iter()
            .zip(steps)
            .zip(&self.to_goal)
            .map(|((a, &s), table)| TimeExpandedDag::build_with(&self.instance.map, a, s, table))
            .collect();
        let mut joint = JointDag::new(&dags).with_deadline(self.deadline);
        let mut plans = Vec::new();
        let end = if self.limits.collect_all_plans {
            let cap = self.limits.max_plans_per_node;
            let mut capped = false;
            let end = joint.for_each_plan(|p| {
                if plans.len() as u64 >= cap {
                    capped = true;
                    return ControlFlow::Break(());
                }
                plans.push(p);
                ControlFlow::Continue(())
            });
            if capped {
                self.stats.low_level_calls += joint.expansions();
                return Verdict::Truncated(plans);
            }
            end
        } else {
            let (first, end) = joint.first_plan();
            plans.extend(first);
            end
        };
        self.stats.low_level_calls += joint.expansions();
        match end {
            WalkEnd::Interrupted => Verdict::Truncated(plans),
            _ if plans.is_empty() => Verdict::Infeasible,
            _ => Verdict::Plans(plans),
        }
    }

    /// Explores every node with `f <= bound` below `root`, adding the plans of
    /// envy-free step vectors to the accumulator.
    pub fn depth_bound_search(&mut self, root: &SearchNode, bound: f64) -> BoundOutcome {
        let mut min_exceeding = f64::INFINITY;
        let mut visited: HashSet<Vec<usize>> = HashSet::new();
        let mut stack = vec![root.clone()];
        let within = |f: f64| f <= bound + BOUND_EPS * bound.abs().max(1.0);
        while let Some(node) = stack.pop() {
            if !visited.insert(node.steps.clone()) {
                continue;
            }
            if !within(node.f()) {
                min_exceeding = min_exceeding.min(node.f());
                continue;
            }
            if self.deadline.expired() {
                return BoundOutcome {
                    found: !self.accumulator.is_empty(),
                    min_exceeding,
                    interrupted: Some(SolveStatus::Timeout),
                };
            }
            self.stats.nodes_expanded += 1;
            if !self.verdicts.contains_key(&node.steps) {
                let verdict = self.low_level(&node.steps);
                self.verdicts.insert(node.steps.clone(), verdict);
            }
            match &self.verdicts[&node.steps] {
                Verdict::Plans(plans) => self.accumulator.extend(plans.iter().cloned()),
                Verdict::Truncated(plans) => {
                    let status =
                        if self.deadline.expired() { SolveStatus::Timeout } else { SolveStatus::Truncated };
                    self.accumulator.extend(plans.iter().cloned());
                    return BoundOutcome {
                        found: !self.accumulator.is_empty(),
                        min_exceeding,
                        interrupted: Some(status),
                    };
                }
                Verdict::Envious | Verdict::Infeasible => {}
            }
            // Push in reverse so agent 0's child is explored first.
            for i in (0..node.steps.len()).rev() {
                if node.steps[i] >= self.caps[i] {
                    continue;
                }
                let mut steps = node.steps.clone();
                steps[i] += 1;
                if visited.contains(&steps) {
                    continue;
                }
                let child = self.node(steps);
                self.stats.nodes_generated += 1;
                if child.f().is_finite() {
                    stack.push(child);
                }
            }
        }
        BoundOutcome { found: !self.accumulator.is_empty(), min_exceeding, interrupted: None }
    }

    /// Deepens the bound until a pass ends with a nonempty accumulator, the
    /// tree is exhausted, or a limit is hit.
    pub fn run(mut self, fairness: &FairnessConfig) -> SolveResult {
        let root = self.root();
        let mut bound = root.f();
        let status = loop {
            if !bound.is_finite() || bound > self.limits.max_bound {
                break SolveStatus::NoFairPlan;
            }
            self.stats.bounds.push(bound);
            // Each pass rediscovers everything below the bound.
            self.accumulator.clear();
            let pass = self.depth_bound_search(&root, bound);
            if let Some(status) = pass.interrupted {
                break status;
            }
            if pass.found && !self.limits.exhaustive_bounds {
                break SolveStatus::Solved;
            }
            if !pass.min_exceeding.is_finite() {
                break SolveStatus::NoFairPlan;
            }
            bound = pass.min_exceeding;
        };
        let status = match status {
            SolveStatus::NoFairPlan if !self.accumulator.is_empty() => SolveStatus::Solved,
            s => s,
        };
        finalize(
            Algorithm::Icts,
            status,
            self.instance,
            fairness,
            self.accumulator,
            self.stats,
            self.deadline,
        )
    }
}

/// Fair-ICTS with envy tolerance `instance.epsilon` and all fairness filters on.
pub fn fair_icts_solve(instance: &InstanceSpec, limits: &SolveLimits) -> Result<SolveResult, SolveError> {
    fair_icts_solve_with(instance, limits, &FairnessConfig::new(instance.epsilon))
}

pub fn fair_icts_solve_with(
    instance: &InstanceSpec,
    limits: &SolveLimits,
    fairness: &FairnessConfig,
) -> Result<SolveResult, SolveError> {
    let heuristic: &dyn StepHeuristic = match limits.icts_heuristic {
        HeuristicKind::Zero => &ZeroHeuristic,
        HeuristicKind::EnvyGap => &EnvyGapHeuristic,
    };
    fair_icts_solve_using(instance, limits, fairness, heuristic)
}

/// Fair-ICTS with a caller-supplied step-vector heuristic.
pub fn fair_icts_solve_using(
    instance: &InstanceSpec,
    limits: &SolveLimits,
    fairness: &FairnessConfig,
    heuristic: &dyn StepHeuristic,
) -> Result<SolveResult, SolveError> {
    let deadline = Deadline::after(limits.time_limit);
    let search = IctsSearch::new(instance, limits, fairness.effective_epsilon(), heuristic, &deadline)?;
    Ok(search.run(fairness))
}
