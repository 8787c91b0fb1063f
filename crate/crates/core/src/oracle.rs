//! Brute-force ground truth for tiny instances.
//!
//! Everything here is written independently of the solvers: walks come from a
//! plain depth-first enumeration, joint feasibility from a pairwise
//! compatibility table, and the fairness predicates are re-implemented in
//! [`reference`]. Welfare depends on a plan only through its step vector, so
//! the fair optimum is computed over feasible step vectors, each represented
//! by one witness plan.

use std::collections::HashMap;

use thiserror::Error;

use crate::grid::{GridGraph, Vertex};
use crate::mapio::InstanceSpec;
use crate::plan::{AgentType, JointPlan, Path};
use crate::solve::{Algorithm, SolveResult, SolveStats, SolveStatus};

pub const MAX_AGENTS: usize = 4;
pub const MAX_SIDE: usize = 5;
pub const MAX_STEPS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("instance too large for the oracle: {0}")]
    Guard(String),
}

fn guard(instance: &InstanceSpec, max_steps: usize) -> Result<(), OracleError> {
    let (w, h, n) = (instance.map.width(), instance.map.height(), instance.agents.len());
    if n > MAX_AGENTS {
        return Err(OracleError::Guard(format!("{n} agents (max {MAX_AGENTS})")));
    }
    if w > MAX_SIDE || h > MAX_SIDE {
        return Err(OracleError::Guard(format!("{w}x{h} map (max {MAX_SIDE}x{MAX_SIDE})")));
    }
    if max_steps > MAX_STEPS {
        return Err(OracleError::Guard(format!("horizon {max_steps} (max {MAX_STEPS})")));
    }
    Ok(())
}

/// Reference fairness predicates, coded straight from their definitions.
pub mod reference {
    pub const SLACK: f64 = 1e-9;

    pub fn envy_free(w: &[f64], epsilon: f64) -> bool {
        w.iter().all(|a| w.iter().all(|b| (a - b).abs() <= epsilon + SLACK))
    }

    /// Agents ranked by nondecreasing welfare, index order among equals; the
    /// plan fails if a candidate raises the agent at some rank while keeping
    /// every lower rank at least as well off.
    pub fn max_min_fair(plan: &[f64], candidates: &[Vec<f64>]) -> bool {
        let mut rank: Vec<usize> = (0..plan.len()).collect();
        rank.sort_by(|&a, &b| plan[a].partial_cmp(&plan[b]).unwrap().then(a.cmp(&b)));
        for c in candidates {
            for k in 0..rank.len() {
                let i = rank[k];
                if c[i] > plan[i] && rank[..k].iter().all(|&j| c[j] >= plan[j]) {
                    return false;
                }
            }
        }
        true
    }

    pub fn proportionally_fair(plan: &[f64], candidates: &[Vec<f64>], floor: f64) -> bool {
        candidates.iter().all(|c| {
            let mut gain = 0.0;
            for i in 0..plan.len() {
                let d = if plan[i] > floor { plan[i] } else { floor };
                gain += (c[i] - plan[i]) / d;
            }
            gain <= 0.0
        })
    }

    /// Indices passing the enabled predicates against the whole set.
    pub fn filter(set: &[Vec<f64>], max_min: bool, proportional: bool, floor: f64) -> Vec<usize> {
        (0..set.len())
            .filter(|&i| {
                (!max_min || max_min_fair(&set[i], set))
                    && (!proportional || proportionally_fair(&set[i], set, floor))
            })
            .collect()
    }

    /// First index of the largest sum.
    pub fn argmax_sum(set: &[Vec<f64>], among: &[usize]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for &i in among {
            let s: f64 = set[i].iter().sum();
            if best.is_none() || s > best.unwrap().1 {
                best = Some((i, s));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// True if two paths collide: same cell at a time both exist, or a swap.
pub fn paths_collide(a: &[Vertex], b: &[Vertex]) -> bool {
    let shared = a.len().min(b.len());
    for t in 0..shared {
        if a[t] == b[t] {
            return true;
        }
        if t + 1 < shared && a[t] == b[t + 1] && b[t] == a[t + 1] && a[t] != a[t + 1] {
            return true;
        }
    }
    false
}

/// Every walk of exactly `len` steps from `agent.start` to `agent.goal`, in
/// lexicographic order (moves: stay or 4-neighbours).
pub fn walks(map: &GridGraph, agent: &AgentType, len: usize) -> Vec<Path> {
    fn step(map: &GridGraph, goal: Vertex, len: usize, trail: &mut Vec<Vertex>, out: &mut Vec<Path>) {
        let here = *trail.last().unwrap();
        let left = len + 1 - trail.len();
        if left == 0 {
            if here == goal {
                out.push(Path::from_trusted(trail.clone()));
            }
            return;
        }
        if map.manhattan(here, goal) > left {
            return;
        }
        let (x, y) = map.coords(here);
        let mut next: Vec<Vertex> = vec![here];
        if x > 0 {
            next.push(map.vertex(x - 1, y).unwrap());
        }
        if x + 1 < map.width() {
            next.push(map.vertex(x + 1, y).unwrap());
        }
        if y > 0 {
            next.push(map.vertex(x, y - 1).unwrap());
        }
        if y + 1 < map.height() {
            next.push(map.vertex(x, y + 1).unwrap());
        }
        next.retain(|&v| map.is_passable(v));
        next.sort();
        for v in next {
            trail.push(v);
            step(map, goal, len, trail, out);
            trail.pop();
        }
    }
    let mut out = Vec::new();
    if map.is_passable(agent.start) {
        step(map, agent.goal, len, &mut vec![agent.start], &mut out);
    }
    out
}

/// Walk lists per agent and length, with lazily built pairwise compatibility.
struct Enumerator<'a> {
    instance: &'a InstanceSpec,
    walks: Vec<Vec<Vec<Path>>>,
    compat: HashMap<(usize, usize, usize, usize), Vec<Vec<u64>>>,
}

impl<'a> Enumerator<'a> {
    fn new(instance: &'a InstanceSpec, max_steps: usize) -> Self {
        let walks = instance
            .agents
            .iter()
            .map(|a| (0..=max_steps).map(|l| walks(&instance.map, a, l)).collect())
            .collect();
        Self { instance, walks, compat: HashMap::new() }
    }

    fn shortest(&self, agent: usize) -> Option<usize> {
        self.walks[agent].iter().position(|w| !w.is_empty())
    }

    /// Bitset rows: `compat[(i, j, li, lj)][x]` has bit `y` set iff walk `x`
    /// of agent `i` and walk `y` of agent `j` do not collide.
    fn table(&mut self, i: usize, j: usize, li: usize, lj: usize) -> &Vec<Vec<u64>> {
        let walks = &self.walks;
        self.compat.entry((i, j, li, lj)).or_insert_with(|| {
            let (wi, wj) = (&walks[i][li], &walks[j][lj]);
            wi.iter()
                .map(|a| {
                    let mut row = vec![0u64; wj.len().div_ceil(64)];
                    for (y, b) in wj.iter().enumerate() {
                        if !paths_collide(a.vertices(), b.vertices()) {
                            row[y / 64] |= 1 << (y % 64);
                        }
                    }
                    row
                })
                .collect()
        })
    }

    /// Calls `visit` on conflict-free walk choices for step vector `lens`
    /// until it returns false. Returns false if stopped.
    fn for_each(&mut self, lens: &[usize], visit: &mut dyn FnMut(&[usize]) -> bool) -> bool {
        let n = lens.len();
        if (0..n).any(|i| self.walks[i][lens[i]].is_empty()) {
            return true;
        }
        for i in 0..n {
            for j in i + 1..n {
                self.table(i, j, lens[i], lens[j]);
            }
        }
        let mut choice = vec![0usize; n];
        self.descend(lens, 0, &mut choice, visit)
    }

    fn descend(&self, lens: &[usize], k: usize, choice: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize]) -> bool) -> bool {
        if k == lens.len() {
            return visit(choice);
        }
        let count = self.walks[k][lens[k]].len();
        let mut allowed = vec![u64::MAX; count.div_ceil(64)];
        for m in 0..k {
            let row = &self.compat[&(m, k, lens[m], lens[k])][choice[m]];
            for (a, r) in allowed.iter_mut().zip(row) {
                *a &= r;
            }
        }
        for y in 0..count {
            if allowed[y / 64] >> (y % 64) & 1 == 0 {
                continue;
            }
            choice[k] = y;
            if !self.descend(lens, k + 1, choice, visit) {
                return false;
            }
        }
        true
    }

    fn plan(&self, lens: &[usize], choice: &[usize]) -> JointPlan {
        JointPlan::new(choice.iter().enumerate().map(|(i, &c)| self.walks[i][lens[i]][c].clone()).collect())
    }

    fn witness(&mut self, lens: &[usize]) -> Option<JointPlan> {
        let mut found = None;
        self.for_each(lens, &mut |c| {
            found = Some(c.to_vec());
            false
        });
        found.map(|c| self.plan(lens, &c))
    }

    /// Every step vector with `shortest_i <= s_i <= max_steps`, lexicographic.
    fn step_vectors(&self, max_steps: usize) -> Vec<Vec<usize>> {
        let lows: Option<Vec<usize>> = (0..self.walks.len()).map(|i| self.shortest(i)).collect();
        let Some(lows) = lows else { return Vec::new() };
        let mut out = vec![vec![]];
        for &lo in &lows {
            out = out
                .into_iter()
                .flat_map(|v| {
                    (lo..=max_steps).map(move |s| {
                        let mut v = v.clone();
                        v.push(s);
                        v
                    })
                })
                .collect();
        }
        out
    }

    fn agents(&self) -> &[AgentType] {
        &self.instance.agents
    }
}

fn welfare_of(agents: &[AgentType], steps: &[usize]) -> Vec<f64> {
    agents.iter().zip(steps).map(|(a, &s)| a.utility - s as f64 * a.step_cost).collect()
}

/// Every conflict-free joint plan in which each agent takes at most
/// `max_steps` timesteps, ordered by step vector, then by walk choice.
pub fn enumerate_feasible(instance: &InstanceSpec, max_steps: usize) -> Result<Vec<JointPlan>, OracleError> {
    guard(instance, max_steps)?;
    let mut e = Enumerator::new(instance, max_steps);
    let mut out = Vec::new();
    for lens in e.step_vectors(max_steps) {
        let mut choices = Vec::new();
        e.for_each(&lens, &mut |c| {
            choices.push(c.to_vec());
            true
        });
        out.extend(choices.iter().map(|c| e.plan(&lens, c)));
    }
    Ok(out)
}

/// Step vectors admitting at least one conflict-free joint plan, each with
/// its first witness.
pub fn feasible_step_vectors(
    instance: &InstanceSpec,
    max_steps: usize,
) -> Result<Vec<(Vec<usize>, JointPlan)>, OracleError> {
    guard(instance, max_steps)?;
    let mut e = Enumerator::new(instance, max_steps);
    Ok(e.step_vectors(max_steps).into_iter().filter_map(|l| e.witness(&l).map(|p| (l, p))).collect())
}

/// Which fairness predicates the oracle applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleFairness {
    pub epsilon: f64,
    pub max_min: bool,
    pub proportional: bool,
    pub welfare_floor: f64,
}

impl OracleFairness {
    pub fn new(epsilon: f64) -> Self {
        Self { epsilon, max_min: true, proportional: true, welfare_floor: 1e-9 }
    }
}

impl From<&crate::fairness::FairnessConfig> for OracleFairness {
    fn from(c: &crate::fairness::FairnessConfig) -> Self {
        Self {
            epsilon: c.effective_epsilon(),
            max_min: c.max_min,
            proportional: c.proportional,
            welfare_floor: c.welfare_floor,
        }
    }
}

/// Oracle answer with the welfare-optimal feasible plan ignoring fairness.
#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub result: SolveResult,
    /// Best social welfare over all feasible plans (`d*`).
    pub unconstrained_optimum: Option<f64>,
}

fn result_from(
    agents: &[AgentType],
    candidates: Vec<JointPlan>,
    fairness: &OracleFairness,
    status_if_found: SolveStatus,
) -> SolveResult {
    let set: Vec<Vec<f64>> = candidates.iter().map(|p| welfare_of(agents, &p.step_vector())).collect();
    let kept = reference::filter(&set, fairness.max_min, fairness.proportional, fairness.welfare_floor);
    let best = reference::argmax_sum(&set, &kept);
    SolveResult {
        algorithm: Algorithm::Oracle,
        status: if best.is_some() { status_if_found } else { SolveStatus::NoFairPlan },
        plan: best.map(|i| candidates[i].clone()),
        welfare: best.map(|i| set[i].clone()),
        social_welfare: best.map(|i| set[i].iter().sum()),
        fair_plans: kept.iter().map(|&i| candidates[i].clone()).collect(),
        candidates,
        stats: SolveStats::default(),
    }
}

/// Fair optimum relative to every feasible plan within the horizon: keep the
/// envy-free ones, filter them against each other, take the welfare argmax.
pub fn oracle_fair_optimum(
    instance: &InstanceSpec,
    max_steps: usize,
    fairness: &OracleFairness,
) -> Result<OracleOutcome, OracleError> {
    let feasible = feasible_step_vectors(instance, max_steps)?;
    let agents = &instance.agents;
    let unconstrained_optimum = feasible
        .iter()
        .map(|(l, _)| welfare_of(agents, l).iter().sum::<f64>())
        .fold(None, |best: Option<f64>, sw| Some(best.map_or(sw, |b| b.max(sw))));
    let candidates: Vec<JointPlan> = feasible
        .into_iter()
        .filter(|(l, _)| reference::envy_free(&welfare_of(agents, l), fairness.epsilon))
        .map(|(_, p)| p)
        .collect();
    Ok(OracleOutcome { result: result_from(agents, candidates, fairness, SolveStatus::Solved), unconstrained_optimum })
}

/// The envy-free feasible step vectors of least extra cost `sum_i (s_i - s_i*) c_i`
/// (within `1e-12`), with witnesses: what a complete Fair-ICTS run accumulates.
pub fn cheapest_envy_free_stratum(
    instance: &InstanceSpec,
    max_steps: usize,
    epsilon: f64,
) -> Result<Vec<(Vec<usize>, JointPlan)>, OracleError> {
    guard(instance, max_steps)?;
    let mut e = Enumerator::new(instance, max_steps);
    let agents = e.agents().to_vec();
    let Some(lows) = (0..agents.len()).map(|i| e.shortest(i)).collect::<Option<Vec<_>>>() else {
        return Ok(Vec::new());
    };
    let cost = |l: &[usize]| -> f64 {
        l.iter().zip(&lows).zip(&agents).map(|((&s, &d), a)| (s - d) as f64 * a.step_cost).sum()
    };
    let mut vectors: Vec<Vec<usize>> = e
        .step_vectors(max_steps)
        .into_iter()
        .filter(|l| reference::envy_free(&welfare_of(&agents, l), epsilon))
        .collect();
    vectors.sort_by(|a, b| cost(a).total_cmp(&cost(b)));
    let mut stratum = Vec::new();
    let mut floor: Option<f64> = None;
    for l in vectors {
        let c = cost(&l);
        if floor.is_some_and(|f| c > f + 1e-12 * f.abs().max(1.0)) {
            break;
        }
        if let Some(p) = e.witness(&l) {
            floor.get_or_insert(c);
            stratum.push((l, p));
        }
    }
    Ok(stratum)
}

/// The answer a complete Fair-ICTS run must give: the fairness filters and
/// welfare argmax applied to the cheapest envy-free stratum.
pub fn expected_icts_outcome(
    instance: &InstanceSpec,
    max_steps: usize,
    fairness: &OracleFairness,
) -> Result<SolveResult, OracleError> {
    let stratum = cheapest_envy_free_stratum(instance, max_steps, fairness.epsilon)?;
    let plans = stratum.into_iter().map(|(_, p)| p).collect();
    Ok(result_from(&instance.agents, plans, fairness, SolveStatus::Solved))
}

/// Re-derives a solver's answer from its own candidate set.
#[derive(Debug, Clone)]
pub struct RelativeCheck {
    /// The oracle's answer computed from the solver's candidates.
    pub result: SolveResult,
    /// Candidates that are not feasible, envy-free plans serving the agents.
    pub bad_candidates: Vec<usize>,
}

impl RelativeCheck {
    /// Solver and oracle agree on emptiness and on social welfare within `tol`.
    pub fn agrees_with(&self, solver: &SolveResult, tol: f64) -> bool {
        if !self.bad_candidates.is_empty() {
            return false;
        }
        match (self.result.social_welfare, solver.social_welfare) {
            (Some(a), Some(b)) => (a - b).abs() <= tol && solver.status == SolveStatus::Solved,
            (None, None) => solver.status == SolveStatus::NoFairPlan,
            _ => false,
        }
    }
}

/// Oracle in R-relative mode: the candidate set is the solver's accumulator.
pub fn check_relative(instance: &InstanceSpec, solver: &SolveResult, fairness: &OracleFairness) -> RelativeCheck {
    let agents = &instance.agents;
    let bad_candidates = solver
        .candidates
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let serves = p.paths.len() == agents.len()
                && p.paths.iter().zip(agents).all(|(path, a)| {
                    path.start() == a.start
                        && path.end() == a.goal
                        && path.vertices().windows(2).all(|w| w[0] == w[1] || instance.map.is_adjacent(w[0], w[1]))
                        && path.vertices().iter().all(|&v| instance.map.is_passable(v))
                });
            let collides = (0..p.paths.len()).any(|i| {
                (i + 1..p.paths.len()).any(|j| paths_collide(p.paths[i].vertices(), p.paths[j].vertices()))
            });
            let envy_free = reference::envy_free(&welfare_of(agents, &p.step_vector()), fairness.epsilon);
            !serves || collides || !envy_free
        })
        .map(|(i, _)| i)
        .collect();
    RelativeCheck {
        result: result_from(agents, solver.candidates.clone(), fairness, SolveStatus::Solved),
        bad_candidates,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::check_feasible;

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

    #[test]
    fn enumerate_examples() {
        let crossing = instance(GridGraph::open(2, 2), &[((0, 0), (1, 1), 1.0, 0.1), ((1, 1), (0, 0), 1.0, 0.1)], 1.0);
        let plans = enumerate_feasible(&crossing, 2).unwrap();
        assert_eq!(plans.len(), 2);
        assert!(plans.iter().all(|p| check_feasible(p).is_empty()));

        let single = instance(GridGraph::open(2, 2), &[((0, 0), (1, 0), 1.0, 0.1)], 1.0);
        assert_eq!(enumerate_feasible(&single, 1).unwrap().len(), 1);

        let corridor = instance(GridGraph::open(3, 1), &[((0, 0), (2, 0), 1.0, 0.1), ((2, 0), (0, 0), 1.0, 0.1)], 1.0);
        assert!(enumerate_feasible(&corridor, 6).unwrap().is_empty());
    }

    #[test]
    fn guards_refuse_large_instances() {
        let big = instance(GridGraph::open(6, 2), &[((0, 0), (1, 0), 1.0, 0.1)], 1.0);
        assert!(enumerate_feasible(&big, 3).is_err());
        let small = instance(GridGraph::open(2, 2), &[((0, 0), (1, 0), 1.0, 0.1)], 1.0);
        assert!(enumerate_feasible(&small, 9).is_err());
    }

    #[test]
    fn optimum_examples() {
        let crossing = instance(GridGraph::open(2, 2), &[((0, 0), (1, 1), 1.0, 0.1), ((1, 1), (0, 0), 1.0, 0.1)], 1.0);
        let out = oracle_fair_optimum(&crossing, 4, &OracleFairness::new(1.0)).unwrap();
        assert!((out.result.social_welfare.unwrap() - 1.6).abs() < 1e-12);

        // Equal welfare is impossible: agent 1's welfare moves in steps of 0.2
        // from 0.6 and agent 0's in steps of 0.1 from 0.8, never meeting below
        // the horizon of 3.
        let uneven = instance(GridGraph::open(3, 3), &[((0, 0), (2, 0), 1.0, 0.1), ((0, 2), (2, 2), 1.0, 0.2)], 0.0);
        let out = oracle_fair_optimum(&uneven, 3, &OracleFairness::new(0.0)).unwrap();
        assert_eq!(out.result.status, SolveStatus::NoFairPlan);
        assert!(out.unconstrained_optimum.is_some());

        let single = instance(GridGraph::open(3, 3), &[((0, 0), (2, 1), 1.0, 0.1)], 0.0);
        let out = oracle_fair_optimum(&single, 6, &OracleFairness::new(0.0)).unwrap();
        assert!((out.result.social_welfare.unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(out.unconstrained_optimum, out.result.social_welfare);
    }

    #[test]
    fn walks_agree_with_closed_form_on_corridor() {
        // 1x2 corridor, A to B in three steps: AAAB, AABB, ABAB, ABBB.
        let map = GridGraph::open(2, 1);
        let a = AgentType::new(0, Vertex(0), Vertex(1), 1.0, 0.1).unwrap();
        assert_eq!(walks(&map, &a, 3).len(), 4);
        assert_eq!(walks(&map, &a, 2).len(), 2);
        assert_eq!(walks(&map, &a, 0).len(), 0);
    }

    #[test]
    fn reference_predicates_match_library() {
        use crate::fairness;
        let set = vec![vec![0.2, 0.9], vec![0.3, 0.9], vec![0.5, 0.5], vec![0.4, 0.9]];
        for p in &set {
            let refs: Vec<&[f64]> = set.iter().map(Vec::as_slice).collect();
            assert_eq!(reference::max_min_fair(p, &set), fairness::is_max_min_fair(p, refs.iter().copied()));
            assert_eq!(
                reference::proportionally_fair(p, &set, 1e-9),
                fairness::is_proportionally_fair(p, refs.iter().copied(), 1e-9).fair
            );
        }
    }
}
