use std::collections::HashSet;
use std::ops::ControlFlow;

use super::dag::TimeExpandedDag;
use crate::grid::Vertex;
use crate::plan::{JointPlan, Path};
use crate::solve::Deadline;

const NONE: u32 = u32::MAX;

/// How a walk over the joint DAG ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkEnd {
    /// Every conflict-free joint plan was visited.
    Exhausted,
    /// The visitor asked to stop.
    Stopped,
    /// The deadline passed first.
    Interrupted,
}

/// The product `D_1 x ... x D_l` of per-agent DAGs with vertex- and
/// swap-conflicting nodes and edges pruned, explored lazily.
///
/// A joint node at time `t` holds the DAG node of every agent still present
/// (`t <= steps_i`); agents whose walk has ended are absent. Plans come out in
/// lexicographic order of the time-major sequence of joint positions. Joint
/// nodes with no conflict-free completion are remembered and never re-expanded.
pub struct JointDag<'a> {
    dags: &'a [TimeExpandedDag],
    horizon: usize,
    trail: Vec<Vec<u32>>,
    dead: HashSet<(usize, Vec<u32>)>,
    emitted: u64,
    expansions: u64,
    deadline: Option<&'a Deadline>,
    interrupted: bool,
}

impl<'a> JointDag<'a> {
    pub fn new(dags: &'a [TimeExpandedDag]) -> Self {
        let horizon = dags.iter().map(TimeExpandedDag::steps).max().unwrap_or(0);
        Self {
            dags,
            horizon,
            trail: vec![vec![NONE; dags.len()]; horizon + 1],
            dead: HashSet::new(),
            emitted: 0,
            expansions: 0,
            deadline: None,
            interrupted: false,
        }
    }

    pub fn with_deadline(mut self, deadline: &'a Deadline) -> Self {
        self.deadline = Some(deadline);
        self
    }

    /// Joint-node expansions performed so far.
    pub fn expansions(&self) -> u64 {
        self.expansions
    }

    /// Calls `visit` on each conflict-free joint plan until it breaks.
    pub fn for_each_plan(&mut self, mut visit: impl FnMut(JointPlan) -> ControlFlow<()>) -> WalkEnd {
        if self.dags.is_empty() || self.dags.iter().any(TimeExpandedDag::is_empty) {
            return WalkEnd::Exhausted;
        }
        let starts: Vec<Vertex> = self.dags.iter().map(|d| d.vertex(0, 0)).collect();
        let mut seen = HashSet::new();
        if !starts.iter().all(|v| seen.insert(*v)) {
            return WalkEnd::Exhausted;
        }
        self.trail[0].iter_mut().for_each(|n| *n = 0);
        self.interrupted = false;
        match self.layer(0, &mut visit) {
            ControlFlow::Break(()) if self.interrupted => WalkEnd::Interrupted,
            ControlFlow::Break(()) => WalkEnd::Stopped,
            ControlFlow::Continue(()) => WalkEnd::Exhausted,
        }
    }

    /// The first conflict-free joint plan, if any.
    pub fn first_plan(&mut self) -> (Option<JointPlan>, WalkEnd) {
        let mut found = None;
        let end = self.for_each_plan(|p| {
            found = Some(p);
            ControlFlow::Break(())
        });
        (found, end)
    }

    fn plan_from_trail(&self) -> JointPlan {
        let paths = self
            .dags
            .iter()
            .enumerate()
            .map(|(i, dag)| {
                let vs = (0..=dag.steps()).map(|t| dag.vertex(t, self.trail[t][i])).collect();
                Path::from_trusted(vs)
            })
            .collect();
        JointPlan::new(paths)
    }

    fn layer(&mut self, t: usize, visit: &mut impl FnMut(JointPlan) -> ControlFlow<()>) -> ControlFlow<()> {
        if t == self.horizon {
            self.emitted += 1;
            return visit(self.plan_from_trail());
        }
        let key = (t, self.trail[t].clone());
        if self.dead.contains(&key) {
            return ControlFlow::Continue(());
        }
        self.expansions += 1;
        if self.expansions % 1024 == 0 && self.deadline.is_some_and(Deadline::expired) {
            self.interrupted = true;
            return ControlFlow::Break(());
        }
        let before = self.emitted;
        self.assign(t, 0, visit)?;
        if self.emitted == before {
            self.dead.insert(key);
        }
        ControlFlow::Continue(())
    }

    /// Chooses the time-`t + 1` node of agent `k`, given agents `0..k`.
    fn assign(
        &mut self,
        t: usize,
        k: usize,
        visit: &mut impl FnMut(JointPlan) -> ControlFlow<()>,
    ) -> ControlFlow<()> {
        if k == self.dags.len() {
            return self.layer(t + 1, visit);
        }
        let dag = &self.dags[k];
        if dag.steps() < t + 1 {
            self.trail[t + 1][k] = NONE;
            return self.assign(t, k + 1, visit);
        }
        let here = dag.vertex(t, self.trail[t][k]);
        for &next in dag.successors(t, self.trail[t][k]) {
            let there = dag.vertex(t + 1, next);
            let clash = (0..k).any(|m| {
                let other = &self.dags[m];
                if other.steps() < t + 1 {
                    return false;
                }
                let m_there = other.vertex(t + 1, self.trail[t + 1][m]);
                let m_here = other.vertex(t, self.trail[t][m]);
                m_there == there || (here != there && m_there == here && m_here == there)
            });
            if clash {
                continue;
            }
            self.trail[t + 1][k] = next;
            self.assign(t, k + 1, visit)?;
        }
        ControlFlow::Continue(())
    }
}

/// Every conflict-free joint plan of the product, in walk order.
pub fn joint_product_paths(dags: &[TimeExpandedDag]) -> Vec<JointPlan> {
    let mut out = Vec::new();
    JointDag::new(dags).for_each_plan(|p| {
        out.push(p);
        ControlFlow::Continue(())
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridGraph;
    use crate::plan::{check_feasible, AgentType};

    fn agent(map: &GridGraph, id: usize, s: (usize, usize), g: (usize, usize)) -> AgentType {
        AgentType::new(id, map.vertex(s.0, s.1).unwrap(), map.vertex(g.0, g.1).unwrap(), 1.0, 0.1)
            .unwrap()
    }

    fn cartesian_feasible(dags: &[TimeExpandedDag]) -> Vec<JointPlan> {
        let per_agent: Vec<Vec<Path>> = dags.iter().map(TimeExpandedDag::paths).collect();
        let mut combos: Vec<Vec<Path>> = vec![vec![]];
        for paths in &per_agent {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    paths.iter().map(move |p| {
                        let mut c = c.clone();
                        c.push(p.clone());
                        c
                    })
                })
                .collect();
        }
        combos
            .into_iter()
            .map(JointPlan::new)
            .filter(|p| check_feasible(p).is_empty())
            .collect()
    }

    #[test]
    fn two_by_two_crossing_has_two_plans() {
        let g = GridGraph::open(2, 2);
        let a = [agent(&g, 0, (0, 0), (1, 1)), agent(&g, 1, (1, 1), (0, 0))];
        let dags: Vec<_> = a.iter().map(|x| TimeExpandedDag::build(&g, x, 2)).collect();
        let plans = joint_product_paths(&dags);
        assert_eq!(plans.len(), 2);
        for p in &plans {
            assert!(check_feasible(p).is_empty());
        }
    }

    #[test]
    fn single_agent_product_is_identity() {
        let g = GridGraph::open(3, 3);
        let a = agent(&g, 0, (0, 0), (2, 1));
        let dag = TimeExpandedDag::build(&g, &a, 5);
        let plans = joint_product_paths(std::slice::from_ref(&dag));
        let mut direct: Vec<_> = dag.paths().into_iter().map(|p| JointPlan::new(vec![p])).collect();
        let mut got = plans;
        direct.sort();
        got.sort();
        assert_eq!(got, direct);
    }

    #[test]
    fn corridor_crossing_is_empty() {
        let g = GridGraph::open(3, 1);
        let a = [agent(&g, 0, (0, 0), (2, 0)), agent(&g, 1, (2, 0), (0, 0))];
        for s in 2..=6 {
            let dags: Vec<_> = a.iter().map(|x| TimeExpandedDag::build(&g, x, s)).collect();
            assert!(joint_product_paths(&dags).is_empty(), "s = {s}");
            assert!(cartesian_feasible(&dags).is_empty());
        }
    }

    #[test]
    fn pruned_product_matches_filtered_cartesian_product() {
        let g = GridGraph::from_rows(&["...", "..@", "..."]);
        let a = [agent(&g, 0, (0, 0), (2, 2)), agent(&g, 1, (2, 2), (1, 0)), agent(&g, 2, (0, 2), (1, 1))];
        for steps in [[4, 3, 2], [5, 4, 2], [4, 5, 3], [6, 3, 4]] {
            let dags: Vec<_> =
                a.iter().zip(steps).map(|(x, s)| TimeExpandedDag::build(&g, x, s)).collect();
            let mut fast = joint_product_paths(&dags);
            let mut slow = cartesian_feasible(&dags);
            fast.sort();
            slow.sort();
            assert_eq!(fast, slow, "steps {steps:?}");
        }
    }

    #[test]
    fn unequal_lengths_let_arrived_agents_vanish() {
        // Agent 0 arrives at the middle cell at t=1 and disappears, so agent 1
        // may pass through it later.
        let g = GridGraph::open(3, 1);
        let a = [agent(&g, 0, (0, 0), (1, 0)), agent(&g, 1, (2, 0), (0, 0))];
        let dags = vec![TimeExpandedDag::build(&g, &a[0], 1), TimeExpandedDag::build(&g, &a[1], 3)];
        let plans = joint_product_paths(&dags);
        assert!(!plans.is_empty());
        assert!(plans.iter().all(|p| check_feasible(p).is_empty()));
    }
}
