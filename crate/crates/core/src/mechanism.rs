//! Single-parameter mechanism over a fixed set of fair plans.
//!
//! Agents report per-step costs `b_i`. The allocation picks the plan in `R`
//! maximizing `sum_i (u_i - b_i k_i)`, where `k_i` is agent `i`'s path length.
//! Agent `i` pays `r_i k_i`, where the critical value `r_i` is the threshold
//! bid above which the allocation stays inside `i`'s winning set (the plans
//! giving `i` the path it is allocated at the reported bids). The threshold
//! is found by a 100-point probe of `[0, b_max]` followed by bisection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::GridGraph;
use crate::mapio::InstanceSpec;
use crate::plan::{AgentType, JointPlan, Path};

/// Reported welfares within this distance count as tied.
const TIE_EPS: f64 = 1e-12;
/// Bisection stops once the bracket is this narrow.
pub const CRITICAL_TOL: f64 = 1e-9;
const BISECTION_STEPS: usize = 64;
const PROBE_POINTS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("no plans to allocate")]
    NoAllocation,
    #[error("bid {value} of agent {agent} is not a positive finite number")]
    BadBid { agent: usize, value: f64 },
    #[error("expected {expected} bids, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("allocation is not monotone for agent {agent}: wins at bid {winning_bid} but loses at {losing_bid}")]
    NonMonotone { agent: usize, winning_bid: f64, losing_bid: f64 },
}

/// One reported per-step cost per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidProfile(Vec<f64>);

impl BidProfile {
    pub fn new(bids: Vec<f64>) -> Result<Self, MechanismError> {
        if let Some((agent, &value)) = bids.iter().enumerate().find(|(_, b)| !(**b > 0.0 && b.is_finite())) {
            return Err(MechanismError::BadBid { agent, value });
        }
        Ok(Self(bids))
    }

    /// Everyone reports their true step cost.
    pub fn truthful(agents: &[AgentType]) -> Self {
        Self(agents.iter().map(|a| a.step_cost).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Same profile with agent `i`'s bid replaced.
    pub fn with(&self, agent: usize, bid: f64) -> Self {
        let mut b = self.0.clone();
        b[agent] = bid;
        Self(b)
    }

    fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }
}

fn reported_welfare(plan: &JointPlan, agents: &[AgentType], bids: &[f64]) -> f64 {
    plan.paths.iter().zip(agents).zip(bids).map(|((p, a), &b)| a.utility - b * p.len() as f64).sum()
}

/// Index of the allocated plan: highest reported welfare, then fewest total
/// steps, then first in `plans`. Bids may be any reals here.
fn allocate_raw(plans: &[JointPlan], agents: &[AgentType], bids: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64, usize)> = None;
    for (i, p) in plans.iter().enumerate() {
        let sw = reported_welfare(p, agents, bids);
        let steps = p.total_steps();
        let better = match best {
            None => true,
            Some((_, b, s)) => sw > b + TIE_EPS || ((sw - b).abs() <= TIE_EPS && steps < s),
        };
        if better {
            best = Some((i, sw, steps));
        }
    }
    best.map(|(i, _, _)| i)
}

/// The allocated plan's index in `plans`.
pub fn allocate(plans: &[JointPlan], agents: &[AgentType], bids: &BidProfile) -> Result<usize, MechanismError> {
    if bids.0.len() != agents.len() {
        return Err(MechanismError::Arity { expected: agents.len(), got: bids.0.len() });
    }
    allocate_raw(plans, agents, &bids.0).ok_or(MechanismError::NoAllocation)
}

/// Indices of the plans giving `agent` exactly `path`.
pub fn winning_set(plans: &[JointPlan], agent: usize, path: &Path) -> Vec<usize> {
    (0..plans.len()).filter(|&i| plans[i].paths[agent] == *path).collect()
}

/// Probe grid: `PROBE_POINTS` evenly spaced bids on `[0, b_max]` plus `extra`.
fn probe_grid(b_max: f64, extra: f64) -> Vec<f64> {
    let mut grid: Vec<f64> =
        (0..PROBE_POINTS).map(|k| b_max * k as f64 / (PROBE_POINTS - 1) as f64).collect();
    grid.push(extra);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Critical value of `agent` with the other bids fixed, relative to the
/// winning set of its allocated path at `bids`.
pub fn critical_value(
    plans: &[JointPlan],
    agents: &[AgentType],
    agent: usize,
    bids: &BidProfile,
) -> Result<f64, MechanismError> {
    let chosen = allocate(plans, agents, bids)?;
    let target = &plans[chosen].paths[agent];
    let wins = |b: f64| {
        let bid = bids.with(agent, b);
        allocate_raw(plans, agents, &bid.0).is_some_and(|i| plans[i].paths[agent] == *target)
    };
    let b_max = (2.0 * bids.max()).max(1.0);
    let grid = probe_grid(b_max, bids.0[agent]);
    let verdicts: Vec<bool> = grid.iter().map(|&b| wins(b)).collect();
    if let Some(first_win) = verdicts.iter().position(|&w| w) {
        if let Some(later_loss) = verdicts[first_win..].iter().position(|&w| !w) {
            return Err(MechanismError::NonMonotone {
                agent,
                winning_bid: grid[first_win],
                losing_bid: grid[first_win + later_loss],
            });
        }
    }
    let first_win = verdicts.iter().position(|&w| w).expect("the agent wins at its own bid");
    if first_win == 0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (grid[first_win - 1], grid[first_win]);
    for _ in 0..BISECTION_STEPS {
        if hi - lo <= CRITICAL_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if wins(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Allocation, critical values, payments and true-cost utilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismOutcome {
    pub chosen: usize,
    pub step_counts: Vec<usize>,
    pub critical_values: Vec<f64>,
    pub payments: Vec<f64>,
    /// `u_i - c_i k_i - p_i` at true costs, before clamping.
    pub raw_utilities: Vec<f64>,
    /// `max(raw, 0)`.
    pub utilities: Vec<f64>,
}

/// Runs the mechanism at `bids`; utilities use the agents' true costs.
pub fn run_mechanism(
    plans: &[JointPlan],
    agents: &[AgentType],
    bids: &BidProfile,
) -> Result<MechanismOutcome, MechanismError> {
    let chosen = allocate(plans, agents, bids)?;
    let step_counts = plans[chosen].step_vector();
    let critical_values = (0..agents.len())
        .map(|i| critical_value(plans, agents, i, bids))
        .collect::<Result<Vec<_>, _>>()?;
    let payments: Vec<f64> = critical_values.iter().zip(&step_counts).map(|(&r, &k)| r * k as f64).collect();
    let raw_utilities: Vec<f64> = agents
        .iter()
        .zip(&step_counts)
        .zip(&payments)
        .map(|((a, &k), &p)| a.utility - a.step_cost * k as f64 - p)
        .collect();
    let utilities = raw_utilities.iter().map(|&u| u.max(0.0)).collect();
    Ok(MechanismOutcome { chosen, step_counts, critical_values, payments, raw_utilities, utilities })
}

/// Agent `i`'s true-cost utility (raw and clamped) when it reports `bid` and
/// everyone else is truthful.
fn utility_at(
    plans: &[JointPlan],
    agents: &[AgentType],
    truthful: &BidProfile,
    agent: usize,
    bid: f64,
) -> Result<(f64, f64), MechanismError> {
    let bids = truthful.with(agent, bid);
    let chosen = allocate(plans, agents, &bids)?;
    let k = plans[chosen].paths[agent].len() as f64;
    let r = critical_value(plans, agents, agent, &bids)?;
    let a = &agents[agent];
    let raw = a.utility - a.step_cost * k - r * k;
    Ok((raw, raw.max(0.0)))
}

pub const REGRET_TOL: f64 = 1e-9;
pub const IR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCert {
    pub agent: usize,
    /// `None` when the truthful probe found a monotonicity violation.
    pub critical_value: Option<f64>,
    pub payment: Option<f64>,
    pub truthful_utility: Option<f64>,
    /// `u_i - c_i k_i - p_i` before the clamp at zero.
    pub raw_utility: Option<f64>,
    /// Largest `U(misreport) - U(truth)` seen, floored at zero.
    pub max_regret: f64,
    /// Misreports whose outcome could be evaluated.
    pub misreports: usize,
    /// The pre-clamp utility is at least `-IR_TOL`.
    pub ir_ok: bool,
    pub monotone_ok: bool,
    /// First monotonicity witness `(winning bid, losing bid)`, if any.
    pub witness: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub agents: Vec<AgentCert>,
    pub max_regret: f64,
    pub ir_violations: usize,
    pub monotonicity_violations: usize,
}

impl CertReport {
    pub fn is_clean(&self) -> bool {
        self.max_regret <= REGRET_TOL && self.ir_violations == 0 && self.monotonicity_violations == 0
    }
}

/// Empirical DSIC / IR / monotonicity check: every agent misreports
/// `misreport_samples` bids drawn uniformly from `(0, b_max]` while the others
/// stay truthful.
pub fn certify_truthfulness(
    instance: &InstanceSpec,
    plans: &[JointPlan],
    misreport_samples: usize,
    rng_seed: u64,
) -> Result<CertReport, MechanismError> {
    let agents = &instance.agents;
    if plans.is_empty() {
        return Err(MechanismError::NoAllocation);
    }
    let truthful = BidProfile::truthful(agents);
    let b_max = (2.0 * truthful.max()).max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut certs = Vec::with_capacity(agents.len());
    for i in 0..agents.len() {
        let mut cert = AgentCert {
            agent: i,
            critical_value: None,
            payment: None,
            truthful_utility: None,
            raw_utility: None,
            max_regret: 0.0,
            misreports: 0,
            ir_ok: true,
            monotone_ok: true,
            witness: None,
        };
        let note_violation = |cert: &mut AgentCert, e: &MechanismError| {
            if let MechanismError::NonMonotone { winning_bid, losing_bid, .. } = *e {
                cert.monotone_ok = false;
                cert.witness.get_or_insert((winning_bid, losing_bid));
            }
        };
        let truth = match critical_value(plans, agents, i, &truthful) {
            Ok(r) => {
                let k = plans[allocate(plans, agents, &truthful)?].paths[i].len() as f64;
                let a = &agents[i];
                let raw = a.utility - a.step_cost * k - r * k;
                cert.critical_value = Some(r);
                cert.payment = Some(r * k);
                cert.raw_utility = Some(raw);
                cert.truthful_utility = Some(raw.max(0.0));
                cert.ir_ok = raw >= -IR_TOL;
                Some(raw.max(0.0))
            }
            Err(e) => {
                note_violation(&mut cert, &e);
                None
            }
        };
        for _ in 0..misreport_samples {
            let bid = b_max * (1.0 - rng.gen::<f64>());
            match utility_at(plans, agents, &truthful, i, bid) {
                Ok((_, u)) => {
                    cert.misreports += 1;
                    if let Some(t) = truth {
                        cert.max_regret = cert.max_regret.max(u - t);
                    }
                }
                Err(e) => note_violation(&mut cert, &e),
            }
        }
        certs.push(cert);
    }
    Ok(CertReport {
        max_regret: certs.iter().map(|c| c.max_regret).fold(0.0, f64::max),
        ir_violations: certs.iter().filter(|c| !c.ir_ok).count(),
        monotonicity_violations: certs.iter().filter(|c| !c.monotone_ok).count(),
        agents: certs,
    })
}

/// Two plans on an open 3x3 grid whose allocation is not monotone for agent 1:
/// agents cross rows 0 and 2 with `u = (1, 1)`, `c = (0.2, 0.1)`, and the plans
/// have step counts `(2, 3)` and `(3, 2)`. At `b_0 = 0.2`, agent 1 keeps its
/// short path only while bidding below 0.2.
pub fn planted_non_monotone_fixture() -> (InstanceSpec, Vec<JointPlan>) {
    let map = GridGraph::open(3, 3);
    let v = |x, y| map.vertex(x, y).unwrap();
    let agents = vec![
        AgentType::new(0, v(0, 0), v(2, 0), 1.0, 0.2).unwrap(),
        AgentType::new(1, v(0, 2), v(2, 2), 1.0, 0.1).unwrap(),
    ];
    let p = |vs: Vec<crate::grid::Vertex>| Path::new(&map, vs).unwrap();
    let fast0 = p(vec![v(0, 0), v(1, 0), v(2, 0)]);
    let slow0 = p(vec![v(0, 0), v(0, 0), v(1, 0), v(2, 0)]);
    let fast1 = p(vec![v(0, 2), v(1, 2), v(2, 2)]);
    let slow1 = p(vec![v(0, 2), v(0, 2), v(1, 2), v(2, 2)]);
    let plans = vec![JointPlan::new(vec![fast0, slow1]), JointPlan::new(vec![slow0, fast1])];
    let instance = InstanceSpec::new(map, agents, 0, 1.0).expect("fixture is valid");
    (instance, plans)
}
