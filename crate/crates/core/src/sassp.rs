//! Single-agent shortest paths: plain distances for step lower bounds and
//! space-time A* under vertex-time constraints for CBS replanning.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridGraph, Vertex};
use crate::plan::{AgentType, Path};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SearchError {
    #[error("goal {goal:?} is unreachable from {start:?}")]
    Unreachable { start: Vertex, goal: Vertex },
}

/// Forbids `agent` from occupying `vertex` at `time`, or, when `from` is
/// set, from entering `vertex` at `time` out of `from` at `time - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpaceTimeConstraint {
    pub agent: usize,
    pub vertex: Vertex,
    pub time: usize,
    pub from: Option<Vertex>,
}

impl SpaceTimeConstraint {
    pub fn vertex(agent: usize, vertex: Vertex, time: usize) -> Self {
        Self { agent, vertex, time, from: None }
    }

    /// Forbids the move `from -> to` that arrives at `time`.
    pub fn edge(agent: usize, from: Vertex, to: Vertex, time: usize) -> Self {
        Self { agent, vertex: to, time, from: Some(from) }
    }
}

/// Vertex-time cells and timed moves a search must avoid.
#[derive(Default)]
struct Forbidden {
    cells: HashSet<(Vertex, usize)>,
    moves: HashSet<(Vertex, Vertex, usize)>,
}

impl Forbidden {
    fn blocks(&self, from: Vertex, to: Vertex, time: usize) -> bool {
        self.cells.contains(&(to, time)) || self.moves.contains(&(from, to, time))
    }
}

/// Breadth-first distances to (or from) one cell; `None` marks unreachable cells.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    dist: Vec<Option<u32>>,
}

impl DistanceTable {
    pub fn from_source(map: &GridGraph, source: Vertex) -> Self {
        let mut dist = vec![None; map.num_cells()];
        if !map.is_passable(source) {
            return Self { dist };
        }
        dist[source.index()] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            let d = dist[v.index()].unwrap();
            for w in map.neighbors(v) {
                if dist[w.index()].is_none() {
                    dist[w.index()] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        Self { dist }
    }

    pub fn get(&self, v: Vertex) -> Option<usize> {
        self.dist.get(v.index()).copied().flatten().map(|d| d as usize)
    }
}

/// Minimal number of timesteps from `start` to `goal`, ignoring other agents.
pub fn shortest_steps(map: &GridGraph, start: Vertex, goal: Vertex) -> Result<usize, SearchError> {
    SingleAgentPlanner::new(map, start, goal).shortest_steps()
}

/// Space-time A* for one agent with an admissible distance heuristic:
/// Manhattan distance on obstacle-free maps, exact reverse-BFS distance otherwise.
#[derive(Debug, Clone)]
pub struct SingleAgentPlanner<'a> {
    map: &'a GridGraph,
    start: Vertex,
    goal: Vertex,
    to_goal: Option<DistanceTable>,
}

impl<'a> SingleAgentPlanner<'a> {
    pub fn new(map: &'a GridGraph, start: Vertex, goal: Vertex) -> Self {
        let to_goal = (!map.is_open()).then(|| DistanceTable::from_source(map, goal));
        Self { map, start, goal, to_goal }
    }

    pub fn for_agent(map: &'a GridGraph, agent: &AgentType) -> Self {
        Self::new(map, agent.start, agent.goal)
    }

    fn heuristic(&self, v: Vertex) -> Option<usize> {
        match &self.to_goal {
            Some(table) => table.get(v),
            None => Some(self.map.manhattan(v, self.goal)),
        }
    }

    pub fn shortest_steps(&self) -> Result<usize, SearchError> {
        self.search(&Forbidden::default(), usize::MAX)
            .map(|p| p.len())
            .ok_or(SearchError::Unreachable { start: self.start, goal: self.goal })
    }

    /// Minimum-length path violating none of `constraints`, arriving no later
    /// than `max_steps`.
    pub fn plan(&self, constraints: &[SpaceTimeConstraint], max_steps: usize) -> Option<Path> {
        let mut forbidden = Forbidden::default();
        for c in constraints {
            match c.from {
                None => forbidden.cells.insert((c.vertex, c.time)),
                Some(u) => forbidden.moves.insert((u, c.vertex, c.time)),
            };
        }
        self.search(&forbidden, max_steps)
    }

    fn search(&self, forbidden: &Forbidden, max_steps: usize) -> Option<Path> {
        if !self.map.is_passable(self.start) || forbidden.cells.contains(&(self.start, 0)) {
            return None;
        }
        let h0 = self.heuristic(self.start)?;
        if h0 > max_steps {
            return None;
        }
        // Ordered by f, then deeper first, then smaller vertex index.
        let mut open = BinaryHeap::new();
        let mut parent: HashMap<(Vertex, usize), Vertex> = HashMap::new();
        let mut closed: HashSet<(Vertex, usize)> = HashSet::new();
        open.push(Reverse((h0, Reverse(0usize), self.start)));
        while let Some(Reverse((_, Reverse(t), v))) = open.pop() {
            if !closed.insert((v, t)) {
                continue;
            }
            if v == self.goal {
                let mut vertices = vec![v];
                let (mut cur, mut time) = (v, t);
                while time > 0 {
                    cur = parent[&(cur, time)];
                    time -= 1;
                    vertices.push(cur);
                }
                vertices.reverse();
                return Some(Path::from_trusted(vertices));
            }
            let next_t = t + 1;
            for w in self.map.moves(v) {
                if forbidden.blocks(v, w, next_t) || closed.contains(&(w, next_t)) {
                    continue;
                }
                let Some(h) = self.heuristic(w) else { continue };
                if next_t + h > max_steps {
                    continue;
                }
                parent.entry((w, next_t)).or_insert(v);
                open.push(Reverse((next_t + h, Reverse(next_t), w)));
            }
        }
        None
    }
}

/// Convenience wrapper around [`SingleAgentPlanner::plan`].
pub fn constrained_shortest_path(
    map: &GridGraph,
    agent: &AgentType,
    constraints: &[SpaceTimeConstraint],
    max_steps: usize,
) -> Option<Path> {
    let own: Vec<_> = constraints.iter().copied().filter(|c| c.agent == agent.id).collect();
    SingleAgentPlanner::for_agent(map, agent).plan(&own, max_steps)
}

/// Default arrival-time horizon for a search whose unconstrained optimum is `dist`.
pub fn default_horizon(map: &GridGraph, dist: usize) -> usize {
    dist + 2 * (map.width() + map.height())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(map: &GridGraph, s: (usize, usize), g: (usize, usize)) -> AgentType {
        AgentType::new(0, map.vertex(s.0, s.1).unwrap(), map.vertex(g.0, g.1).unwrap(), 1.0, 0.1)
            .unwrap()
    }

    /// Every walk of exactly `len` steps from `start` ending at `goal`.
    fn walks(map: &GridGraph, start: Vertex, goal: Vertex, len: usize) -> Vec<Vec<Vertex>> {
        let mut out = Vec::new();
        let mut stack = vec![vec![start]];
        while let Some(w) = stack.pop() {
            if w.len() == len + 1 {
                if *w.last().unwrap() == goal {
                    out.push(w);
                }
                continue;
            }
            for n in map.moves(*w.last().unwrap()) {
                let mut next = w.clone();
                next.push(n);
                stack.push(next);
            }
        }
        out
    }

    #[test]
    fn shortest_steps_examples() {
        let g = GridGraph::open(5, 5);
        assert_eq!(shortest_steps(&g, g.vertex(0, 0).unwrap(), g.vertex(3, 4).unwrap()), Ok(7));
        let v = g.vertex(2, 2).unwrap();
        assert_eq!(shortest_steps(&g, v, v), Ok(0));
        let walled = GridGraph::from_rows(&["...", ".@@", ".@."]);
        assert!(matches!(
            shortest_steps(&walled, walled.vertex(0, 0).unwrap(), walled.vertex(2, 2).unwrap()),
            Err(SearchError::Unreachable { .. })
        ));
    }

    #[test]
    fn unconstrained_plan_matches_distance() {
        let g = GridGraph::from_rows(&["....", ".@@.", "....", "@..."]);
        let a = agent(&g, (0, 0), (3, 3));
        let p = constrained_shortest_path(&g, &a, &[], 100).unwrap();
        assert_eq!(p.len(), shortest_steps(&g, a.start, a.goal).unwrap());
        assert_eq!(p.start(), a.start);
        assert_eq!(p.end(), a.goal);
    }

    #[test]
    fn blocking_arrival_costs_one_wait_on_open_grid() {
        // Oracle: brute-force the shortest walk avoiding (goal, d).
        let g = GridGraph::open(4, 4);
        let a = agent(&g, (0, 0), (2, 1));
        let d = 3;
        let c = SpaceTimeConstraint::vertex(0, a.goal, d);
        let brute = (d..=d + 2)
            .find(|&len| walks(&g, a.start, a.goal, len).iter().any(|w| w[d] != a.goal))
            .unwrap();
        // One wait anywhere before arrival suffices.
        assert_eq!(brute, d + 1);
        let p = constrained_shortest_path(&g, &a, &[c], 100).unwrap();
        assert_eq!(p.len(), d + 1);
        assert_ne!(p.at(d), Some(a.goal));
    }

    #[test]
    fn full_barrier_yields_none() {
        let g = GridGraph::open(3, 1);
        let a = agent(&g, (0, 0), (2, 0));
        let mid = g.vertex(1, 0).unwrap();
        let cs: Vec<_> =
            (0..=20).map(|t| SpaceTimeConstraint::vertex(0, mid, t)).collect();
        assert_eq!(constrained_shortest_path(&g, &a, &cs, 20), None);
    }

    #[test]
    fn edge_constraint_forbids_only_that_move() {
        let g = GridGraph::open(3, 1);
        let a = agent(&g, (0, 0), (2, 0));
        let v = |x| g.vertex(x, 0).unwrap();
        let edge = SpaceTimeConstraint::edge(0, v(0), v(1), 1);
        let p = constrained_shortest_path(&g, &a, &[edge], 10).unwrap();
        assert_eq!(p.vertices(), &[v(0), v(0), v(1), v(2)]);
        // Entering the same cell at the same time from elsewhere stays legal.
        let b = agent(&g, (2, 0), (0, 0));
        let p = constrained_shortest_path(&g, &b, &[SpaceTimeConstraint::edge(0, v(0), v(1), 1)], 10).unwrap();
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn other_agents_constraints_are_ignored() {
        let g = GridGraph::open(3, 1);
        let a = agent(&g, (0, 0), (2, 0));
        let c = SpaceTimeConstraint::vertex(5, g.vertex(1, 0).unwrap(), 1);
        assert_eq!(constrained_shortest_path(&g, &a, &[c], 20).unwrap().len(), 2);
    }
}
