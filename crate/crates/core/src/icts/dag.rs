use crate::grid::{GridGraph, Vertex};
use crate::plan::{AgentType, Path};
use crate::sassp::DistanceTable;

/// All walks of exactly `steps` timesteps from an agent's start to its goal,
/// stored as a layered graph over `(vertex, t)` nodes.
///
/// Layer `t` holds the vertices that lie on at least one such walk at time
/// `t`, sorted ascending; `successors[t][i]` indexes into layer `t + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeExpandedDag {
    steps: usize,
    layers: Vec<Vec<Vertex>>,
    successors: Vec<Vec<Vec<u32>>>,
}

impl TimeExpandedDag {
    /// Expands `(start, 0)` breadth-first for `steps` layers over moves and
    /// waits, then drops every node that cannot reach `(goal, steps)`.
    pub fn build(map: &GridGraph, agent: &AgentType, steps: usize) -> Self {
        let to_goal = DistanceTable::from_source(map, agent.goal);
        Self::build_with(map, agent, steps, &to_goal)
    }

    pub(crate) fn build_with(
        map: &GridGraph,
        agent: &AgentType,
        steps: usize,
        to_goal: &DistanceTable,
    ) -> Self {
        let alive = |v: Vertex, t: usize| to_goal.get(v).is_some_and(|d| d <= steps - t);
        if !map.is_passable(agent.start) || !alive(agent.start, 0) {
            return Self::empty(steps);
        }
        let mut layers = vec![vec![agent.start]];
        let mut successors = Vec::with_capacity(steps);
        let mut index_of = vec![u32::MAX; map.num_cells()];
        for t in 0..steps {
            let current = &layers[t];
            let mut next: Vec<Vertex> = current
                .iter()
                .flat_map(|&v| map.moves(v))
                .filter(|&w| alive(w, t + 1))
                .collect();
            next.sort_unstable();
            next.dedup();
            for (i, v) in next.iter().enumerate() {
                index_of[v.index()] = i as u32;
            }
            let succ: Vec<Vec<u32>> = current
                .iter()
                .map(|&v| {
                    map.moves(v)
                        .filter(|&w| alive(w, t + 1))
                        .map(|w| index_of[w.index()])
                        .collect()
                })
                .collect();
            successors.push(succ);
            layers.push(next);
        }
        Self { steps, layers, successors }
    }

    fn empty(steps: usize) -> Self {
        Self { steps, layers: Vec::new(), successors: Vec::new() }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer(&self, t: usize) -> &[Vertex] {
        self.layers.get(t).map_or(&[], Vec::as_slice)
    }

    pub fn successors(&self, t: usize, node: u32) -> &[u32] {
        &self.successors[t][node as usize]
    }

    pub fn vertex(&self, t: usize, node: u32) -> Vertex {
        self.layers[t][node as usize]
    }

    pub fn num_nodes(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// Number of root-to-leaf paths (saturating).
    pub fn count_paths(&self) -> u128 {
        if self.is_empty() {
            return 0;
        }
        let mut counts = vec![1u128; self.layers[self.steps].len()];
        for t in (0..self.steps).rev() {
            counts = self.successors[t]
                .iter()
                .map(|s| s.iter().fold(0u128, |acc, &j| acc.saturating_add(counts[j as usize])))
                .collect();
        }
        counts[0]
    }

    /// Every root-to-leaf path, in lexicographic order of vertex sequences.
    pub fn paths(&self) -> Vec<Path> {
        let mut out = Vec::new();
        if self.is_empty() {
            return out;
        }
        let mut trail = vec![0u32];
        self.collect(0, &mut trail, &mut out);
        out
    }

    fn collect(&self, t: usize, trail: &mut Vec<u32>, out: &mut Vec<Path>) {
        if t == self.steps {
            let vs = trail.iter().enumerate().map(|(t, &n)| self.vertex(t, n)).collect();
            out.push(Path::from_trusted(vs));
            return;
        }
        for &n in self.successors(t, trail[t]) {
            trail.push(n);
            self.collect(t + 1, trail, out);
            trail.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(map: &GridGraph, s: (usize, usize), g: (usize, usize)) -> AgentType {
        AgentType::new(0, map.vertex(s.0, s.1).unwrap(), map.vertex(g.0, g.1).unwrap(), 1.0, 0.1)
            .unwrap()
    }

    #[test]
    fn corridor_one_step() {
        let g = GridGraph::open(2, 1);
        let dag = TimeExpandedDag::build(&g, &agent(&g, (0, 0), (1, 0)), 1);
        let paths = dag.paths();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].vertices(), &[Vertex(0), Vertex(1)]);
    }

    #[test]
    fn corridor_three_steps_has_four_walks() {
        // A-B corridor, walks of three steps from A to B: AAAB, AABB, ABAB, ABBB.
        let g = GridGraph::open(2, 1);
        let dag = TimeExpandedDag::build(&g, &agent(&g, (0, 0), (1, 0)), 3);
        assert_eq!(dag.count_paths(), 4);
        assert_eq!(dag.paths().len(), 4);
    }

    #[test]
    fn opposite_corners_two_routes() {
        let g = GridGraph::open(2, 2);
        let dag = TimeExpandedDag::build(&g, &agent(&g, (0, 0), (1, 1)), 2);
        assert_eq!(dag.paths().len(), 2);
    }

    #[test]
    fn too_few_steps_is_empty() {
        let g = GridGraph::open(3, 3);
        let dag = TimeExpandedDag::build(&g, &agent(&g, (0, 0), (2, 2)), 3);
        assert!(dag.is_empty());
        assert_eq!(dag.count_paths(), 0);
    }

    #[test]
    fn single_root_and_goal_leaf() {
        let g = GridGraph::from_rows(&["...", ".@.", "..."]);
        let dag = TimeExpandedDag::build(&g, &agent(&g, (0, 0), (2, 2)), 6);
        assert_eq!(dag.layer(0).len(), 1);
        assert_eq!(dag.layer(6), &[g.vertex(2, 2).unwrap()]);
        for p in dag.paths() {
            assert_eq!(p.len(), 6);
        }
    }
}
