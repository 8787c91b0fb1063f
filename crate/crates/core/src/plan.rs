//! Agents, paths, joint plans, welfare arithmetic and conflict detection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridGraph, Vertex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("agent {agent}: step cost must be positive and finite, got {value}")]
    StepCost { agent: usize, value: f64 },
    #[error("agent {agent}: utility must be nonnegative and finite, got {value}")]
    Utility { agent: usize, value: f64 },
    #[error("agent {agent}: vertex {vertex:?} is not passable")]
    Impassable { agent: usize, vertex: Vertex },
    #[error("path is empty")]
    EmptyPath,
    #[error("path step {time} -> {next}: {from:?} to {to:?} is neither a wait nor a move")]
    BadStep { time: usize, next: usize, from: Vertex, to: Vertex },
    #[error("path of agent {agent} does not run from its start to its goal")]
    EndpointMismatch { agent: usize },
    #[error("plan has {paths} paths for {agents} agents")]
    Arity { paths: usize, agents: usize },
}

/// One agent's type: identity, endpoints, value for arriving and per-timestep cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentType {
    pub id: usize,
    pub start: Vertex,
    pub goal: Vertex,
    pub utility: f64,
    pub step_cost: f64,
}

impl AgentType {
    pub fn new(
        id: usize,
        start: Vertex,
        goal: Vertex,
        utility: f64,
        step_cost: f64,
    ) -> Result<Self, PlanError> {
        if !(step_cost > 0.0 && step_cost.is_finite()) {
            return Err(PlanError::StepCost { agent: id, value: step_cost });
        }
        if !(utility >= 0.0 && utility.is_finite()) {
            return Err(PlanError::Utility { agent: id, value: utility });
        }
        Ok(Self { id, start, goal, utility, step_cost })
    }

    /// Checks that both endpoints are passable on `graph`.
    pub fn validate_on(&self, graph: &GridGraph) -> Result<(), PlanError> {
        for v in [self.start, self.goal] {
            if !graph.is_passable(v) {
                return Err(PlanError::Impassable { agent: self.id, vertex: v });
            }
        }
        Ok(())
    }

    /// Welfare of a path taking `steps` timesteps.
    pub fn welfare_at(&self, steps: usize) -> f64 {
        self.utility - steps as f64 * self.step_cost
    }
}

/// Timestamped vertex sequence; entry `t` is the vertex occupied at time `t`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Path(Vec<Vertex>);

impl Path {
    /// Validates that consecutive vertices are equal or adjacent passable cells.
    pub fn new(graph: &GridGraph, vertices: Vec<Vertex>) -> Result<Self, PlanError> {
        if vertices.is_empty() {
            return Err(PlanError::EmptyPath);
        }
        for (t, pair) in vertices.windows(2).enumerate() {
            let (a, b) = (pair[0], pair[1]);
            if !graph.is_passable(b) || (a != b && !graph.is_adjacent(a, b)) {
                return Err(PlanError::BadStep { time: t, next: t + 1, from: a, to: b });
            }
        }
        if !graph.is_passable(vertices[0]) {
            return Err(PlanError::BadStep { time: 0, next: 0, from: vertices[0], to: vertices[0] });
        }
        Ok(Self(vertices))
    }

    /// Wraps a vertex sequence the caller already knows to be a valid walk.
    pub(crate) fn from_trusted(vertices: Vec<Vertex>) -> Self {
        debug_assert!(!vertices.is_empty());
        Self(vertices)
    }

    /// Number of timesteps taken (moves plus waits).
    pub fn len(&self) -> usize {
        self.0.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.0
    }

    /// Vertex at time `t`, or `None` once the agent has arrived and left.
    pub fn at(&self, t: usize) -> Option<Vertex> {
        self.0.get(t).copied()
    }

    pub fn start(&self) -> Vertex {
        self.0[0]
    }

    pub fn end(&self) -> Vertex {
        *self.0.last().expect("nonempty path")
    }

    pub fn serves(&self, agent: &AgentType) -> bool {
        self.start() == agent.start && self.end() == agent.goal
    }
}

/// One path per agent, indexed by agent id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JointPlan {
    pub paths: Vec<Path>,
}

impl JointPlan {
    pub fn new(paths: Vec<Path>) -> Self {
        Self { paths }
    }

    pub fn num_agents(&self) -> usize {
        self.paths.len()
    }

    pub fn step_vector(&self) -> Vec<usize> {
        self.paths.iter().map(Path::len).collect()
    }

    pub fn total_steps(&self) -> usize {
        self.paths.iter().map(Path::len).sum()
    }

    /// Welfare vector without endpoint checks; lengths alone determine welfare.
    pub fn welfares(&self, agents: &[AgentType]) -> WelfareVector {
        WelfareVector(
            agents
                .iter()
                .zip(&self.paths)
                .map(|(a, p)| a.welfare_at(p.len()))
                .collect(),
        )
    }
}

/// Per-agent welfare `u_i - |pi_i| * c_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareVector(pub Vec<f64>);

impl WelfareVector {
    pub fn from_steps(agents: &[AgentType], steps: &[usize]) -> Self {
        Self(agents.iter().zip(steps).map(|(a, &s)| a.welfare_at(s)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// `max - min`, zero for a single agent.
    pub fn spread(&self) -> f64 {
        let (lo, hi) = self
            .0
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| (lo.min(w), hi.max(w)));
        if self.0.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }
}

pub fn welfare(agent: &AgentType, path: &Path) -> Result<f64, PlanError> {
    if !path.serves(agent) {
        return Err(PlanError::EndpointMismatch { agent: agent.id });
    }
    Ok(agent.welfare_at(path.len()))
}

pub fn social_welfare(plan: &JointPlan, agents: &[AgentType]) -> Result<f64, PlanError> {
    if plan.paths.len() != agents.len() {
        return Err(PlanError::Arity { paths: plan.paths.len(), agents: agents.len() });
    }
    agents
        .iter()
        .zip(&plan.paths)
        .map(|(a, p)| welfare(a, p))
        .sum()
}

/// A collision between two mutually active agents. `agents.0 < agents.1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Conflict {
    /// Both agents occupy `vertex` at `time`.
    Vertex { agents: (usize, usize), vertex: Vertex, time: usize },
    /// `agents.0` moves `from -> to` while `agents.1` moves `to -> from`,
    /// between `time` and `time + 1`.
    Swap { agents: (usize, usize), from: Vertex, to: Vertex, time: usize },
}

impl Conflict {
    pub fn agents(&self) -> (usize, usize) {
        match *self {
            Conflict::Vertex { agents, .. } | Conflict::Swap { agents, .. } => agents,
        }
    }

    /// Timestamp at which the collision is complete.
    pub fn event_time(&self) -> usize {
        match *self {
            Conflict::Vertex { time, .. } => time,
            Conflict::Swap { time, .. } => time + 1,
        }
    }

    /// Earliest-first, then lowest agent pair, vertex before swap.
    pub fn order_key(&self) -> (usize, usize, usize, u8) {
        let (a, b) = self.agents();
        let kind = matches!(self, Conflict::Swap { .. }) as u8;
        (self.event_time(), a, b, kind)
    }
}

/// Every vertex and swap conflict in `plan`, in [`Conflict::order_key`] order.
///
/// Agents exist from `t = 0` until the last entry of their path.
pub fn check_feasible(plan: &JointPlan) -> Vec<Conflict> {
    let horizon = plan.paths.iter().map(Path::len).max().unwrap_or(0);
    let mut conflicts = Vec::new();
    for t in 0..=horizon {
        for (i, pi) in plan.paths.iter().enumerate() {
            let Some(vi) = pi.at(t) else { continue };
            for (j, pj) in plan.paths.iter().enumerate().skip(i + 1) {
                let Some(vj) = pj.at(t) else { continue };
                if vi == vj {
                    conflicts.push(Conflict::Vertex { agents: (i, j), vertex: vi, time: t });
                }
                if let (Some(ni), Some(nj)) = (pi.at(t + 1), pj.at(t + 1)) {
                    if vi != ni && vi == nj && vj == ni {
                        conflicts.push(Conflict::Swap { agents: (i, j), from: vi, to: ni, time: t });
                    }
                }
            }
        }
    }
    conflicts.sort_by_key(Conflict::order_key);
    conflicts
}
