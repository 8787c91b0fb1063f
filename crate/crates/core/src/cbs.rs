//! Fair conflict-based search.
//!
//! The constraint tree is expanded best-first by sum of individual costs and,
//! unlike plain CBS, is not abandoned at the first conflict-free node: every
//! node is expanded until the frontier empties (or a limit is hit), and every
//! conflict-free envy-free solution met on the way joins the accumulator.
//!
//! A vertex conflict `(a, b, v, t)` forbids `v` at `t` to each agent in turn.
//! A swap where `a` moves `v -> w` and `b` moves `w -> v` forbids `a` from `w`
//! and `b` from `v` at `t + 1`; each child removes the swap.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use crate::fairness::{is_envy_free, FairnessConfig};
use crate::grid::GridGraph;
use crate::mapio::InstanceSpec;
use crate::plan::{check_feasible, AgentType, Conflict, JointPlan};
use crate::sassp::{SingleAgentPlanner, SpaceTimeConstraint};
use crate::solve::{
    finalize, shortest_distances, Algorithm, Deadline, SolveError, SolveLimits, SolveResult,
    SolveStats, SolveStatus,
};

/// Constraint-tree node.
#[derive(Debug, Clone, PartialEq)]
pub struct CtNode {
    pub solution: JointPlan,
    /// Sorted, without duplicates.
    pub constraints: Vec<SpaceTimeConstraint>,
    /// `sum_i |pi_i| * c_i`.
    pub cost: f64,
}

/// Sum of individual costs.
pub fn sic(plan: &JointPlan, agents: &[AgentType]) -> f64 {
    plan.paths.iter().zip(agents).map(|(p, a)| p.len() as f64 * a.step_cost).sum()
}

/// Earliest conflict; ties go to the lowest agent pair.
pub fn find_conflict(plan: &JointPlan) -> Option<Conflict> {
    check_feasible(plan).into_iter().next()
}

/// The one constraint per side that removes `conflict`.
pub fn split(conflict: &Conflict) -> [SpaceTimeConstraint; 2] {
    match *conflict {
        Conflict::Vertex { agents: (a, b), vertex, time } => [
            SpaceTimeConstraint::vertex(a, vertex, time),
            SpaceTimeConstraint::vertex(b, vertex, time),
        ],
        Conflict::Swap { agents: (a, b), from, to, time } => [
            SpaceTimeConstraint::edge(a, from, to, time + 1),
            SpaceTimeConstraint::edge(b, to, from, time + 1),
        ],
    }
}

/// Children of `node` for `conflict`, replanning only the constrained agent.
/// Children whose replanning fails within `caps` are dropped.
pub fn expand(
    map: &GridGraph,
    agents: &[AgentType],
    caps: &[usize],
    node: &CtNode,
    conflict: &Conflict,
) -> Vec<CtNode> {
    split(conflict)
        .into_iter()
        .filter_map(|c| child(map, agents, caps, node, c))
        .collect()
}

fn child(
    map: &GridGraph,
    agents: &[AgentType],
    caps: &[usize],
    node: &CtNode,
    added: SpaceTimeConstraint,
) -> Option<CtNode> {
    let mut constraints = node.constraints.clone();
    if let Err(at) = constraints.binary_search(&added) {
        constraints.insert(at, added);
    }
    let a = &agents[added.agent];
    let own: Vec<SpaceTimeConstraint> =
        constraints.iter().copied().filter(|c| c.agent == added.agent).collect();
    let path = SingleAgentPlanner::for_agent(map, a).plan(&own, caps[added.agent])?;
    let mut solution = node.solution.clone();
    solution.paths[added.agent] = path;
    let cost = sic(&solution, agents);
    Some(CtNode { solution, constraints, cost })
}

struct Queued {
    cost: f64,
    seq: u64,
    node: CtNode,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // Reversed: BinaryHeap pops the cheapest, oldest node first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then(other.seq.cmp(&self.seq))
    }
}

/// Fair-CBS with envy tolerance `instance.epsilon` and all fairness filters on.
pub fn fair_cbs_solve(instance: &InstanceSpec, limits: &SolveLimits) -> Result<SolveResult, SolveError> {
    fair_cbs_solve_with(instance, limits, &FairnessConfig::new(instance.epsilon))
}

pub fn fair_cbs_solve_with(
    instance: &InstanceSpec,
    limits: &SolveLimits,
    fairness: &FairnessConfig,
) -> Result<SolveResult, SolveError> {
    let deadline = Deadline::after(limits.time_limit);
    let shortest = shortest_distances(instance)?;
    let caps = limits.step_caps(instance, &shortest);
    let agents = &instance.agents;
    let map = &instance.map;
    let epsilon = fairness.effective_epsilon();
    let mut stats = SolveStats {
        base_cost: agents.iter().zip(&shortest).map(|(a, &d)| d as f64 * a.step_cost).sum(),
        ..SolveStats::default()
    };

    let mut paths = Vec::with_capacity(agents.len());
    for (a, &cap) in agents.iter().zip(&caps) {
        stats.low_level_calls += 1;
        match SingleAgentPlanner::for_agent(map, a).plan(&[], cap) {
            Some(p) => paths.push(p),
            None => {
                let result = finalize(Algorithm::Cbs, SolveStatus::NoFairPlan, instance, fairness, Vec::new(), stats, &deadline);
                return Ok(result);
            }
        }
    }
    let solution = JointPlan::new(paths);
    let cost = sic(&solution, agents);
    let mut open = BinaryHeap::new();
    let mut seq = 0u64;
    open.push(Queued { cost, seq, node: CtNode { solution, constraints: Vec::new(), cost } });
    let mut seen: HashSet<Vec<SpaceTimeConstraint>> = HashSet::from([Vec::new()]);
    let mut found: HashSet<JointPlan> = HashSet::new();
    let mut accumulator = Vec::new();

    let status = loop {
        let Some(Queued { node, .. }) = open.pop() else {
            break SolveStatus::NoFairPlan;
        };
        if deadline.expired() {
            break SolveStatus::Timeout;
        }
        if stats.nodes_expanded >= limits.max_ct_nodes {
            break SolveStatus::Truncated;
        }
        stats.nodes_expanded += 1;
        let Some(conflict) = find_conflict(&node.solution) else {
            let w = node.solution.welfares(agents);
            if is_envy_free(w.values(), epsilon) && found.insert(node.solution.clone()) {
                accumulator.push(node.solution);
            }
            continue;
        };
        for added in split(&conflict) {
            let mut key = node.constraints.clone();
            match key.binary_search(&added) {
                Ok(_) => continue,
                Err(at) => key.insert(at, added),
            }
            if !seen.insert(key) {
                continue;
            }
            stats.low_level_calls += 1;
            if let Some(c) = child(map, agents, &caps, &node, added) {
                seq += 1;
                stats.nodes_generated += 1;
                open.push(Queued { cost: c.cost, seq, node: c });
            }
        }
    };
    Ok(finalize(Algorithm::Cbs, status, instance, fairness, accumulator, stats, &deadline))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Vertex;
    use crate::plan::Path;

    fn instance(map: GridGraph, ends: &[((usize, usize), (usize, usize), f64, f64)], eps: f64) -> InstanceSpec {
        let agents = ends
            .iter()
            .enumerate()
            .map(|(i, &(s, g, u, c))| {
                AgentType::new(i, map.vertex(s.0, s.1).unwrap(), map.vertex(g.0, g.1).unwrap(), u, c)
                    .unwrap()
            })
            .collect();
        InstanceSpec::new(map, agents, 0, eps).unwrap()
    }

    fn path(vs: &[u32]) -> Path {
        Path::from_trusted(vs.iter().map(|&v| Vertex(v)).collect())
    }

    fn limits() -> SolveLimits {
        SolveLimits { time_limit: None, ..SolveLimits::default() }
    }

    #[test]
    fn find_conflict_order() {
        assert_eq!(find_conflict(&JointPlan::new(vec![path(&[0, 1]), path(&[3, 2])])), None);
        // Vertex conflict at t=1 (agents 0, 1 at cell 1) beats the later swap.
        let plan = JointPlan::new(vec![path(&[0, 1, 2, 3]), path(&[2, 1, 3, 2]), path(&[8, 8, 8, 8])]);
        let c = find_conflict(&plan).unwrap();
        assert!(matches!(c, Conflict::Vertex { agents: (0, 1), time: 1, .. }));
        // Two vertex conflicts at t=1: (0,1) and (0,2); the lower pair wins.
        let plan = JointPlan::new(vec![path(&[0, 1]), path(&[2, 1]), path(&[5, 1])]);
        let c = find_conflict(&plan).unwrap();
        assert_eq!(c.agents(), (0, 1));
    }

    #[test]
    fn swap_children_remove_the_swap() {
        let inst = instance(GridGraph::open(2, 2), &[((0, 0), (1, 0), 1.0, 0.1), ((1, 0), (0, 0), 1.0, 0.1)], 1.0);
        let solution = JointPlan::new(vec![path(&[0, 1]), path(&[1, 0])]);
        let node = CtNode { cost: sic(&solution, &inst.agents), solution, constraints: vec![] };
        let conflict = find_conflict(&node.solution).unwrap();
        assert!(matches!(conflict, Conflict::Swap { .. }));
        let [c0, c1] = split(&conflict);
        assert_eq!(c0, SpaceTimeConstraint::edge(0, Vertex(0), Vertex(1), 1));
        assert_eq!(c1, SpaceTimeConstraint::edge(1, Vertex(1), Vertex(0), 1));
        let kids = expand(&inst.map, &inst.agents, &[10, 10], &node, &conflict);
        assert_eq!(kids.len(), 2);
        for k in &kids {
            assert!(!check_feasible(&k.solution).iter().any(|c| matches!(c, Conflict::Swap { time: 0, .. })));
            assert!((k.cost - sic(&k.solution, &inst.agents)).abs() < 1e-12);
        }
    }

    #[test]
    fn vertex_conflict_two_children_and_failed_replan() {
        // 3x2 grid: agent 0 crosses the top row, agent 1 steps up into its middle.
        let inst = instance(GridGraph::open(3, 2), &[((0, 0), (2, 0), 1.0, 0.1), ((1, 1), (1, 0), 1.0, 0.1)], 1.0);
        let solution = JointPlan::new(vec![path(&[0, 1, 2]), path(&[4, 1])]);
        let node = CtNode { cost: 0.3, solution, constraints: vec![] };
        let conflict = find_conflict(&node.solution).unwrap();
        assert!(matches!(conflict, Conflict::Vertex { agents: (0, 1), vertex: Vertex(1), time: 1 }));
        assert_eq!(expand(&inst.map, &inst.agents, &[5, 5], &node, &conflict).len(), 2);
        // Agent 0 has no slack to avoid (1, t=1); only agent 1's child survives.
        let kids = expand(&inst.map, &inst.agents, &[2, 5], &node, &conflict);
        assert_eq!(kids.len(), 1);
        assert_eq!(kids[0].constraints[0].agent, 1);
        assert!(expand(&inst.map, &inst.agents, &[2, 1], &node, &conflict).is_empty());
    }

    #[test]
    fn single_agent() {
        let inst = instance(GridGraph::open(4, 1), &[((0, 0), (3, 0), 1.0, 0.1)], 0.5);
        let r = fair_cbs_solve(&inst, &limits()).unwrap();
        assert_eq!(r.status, SolveStatus::Solved);
        assert!((r.social_welfare.unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn crossing_matches_icts() {
        let inst = instance(GridGraph::open(2, 2), &[((0, 0), (1, 1), 1.0, 0.1), ((1, 1), (0, 0), 1.0, 0.1)], 1.0);
        let r = fair_cbs_solve(&inst, &limits()).unwrap();
        assert_eq!(r.status, SolveStatus::Solved);
        assert!((r.social_welfare.unwrap() - 1.6).abs() < 1e-12);
        let plan = r.plan.unwrap();
        assert!(check_feasible(&plan).is_empty());
    }

    #[test]
    fn zero_epsilon_with_unequal_welfare_has_no_fair_plan() {
        let inst = instance(GridGraph::open(3, 3), &[((0, 0), (2, 0), 1.0, 0.1), ((0, 2), (2, 2), 1.0, 0.2)], 0.0);
        let r = fair_cbs_solve(&inst, &limits()).unwrap();
        assert_eq!(r.status, SolveStatus::NoFairPlan);
        assert!(r.plan.is_none());
    }
}
