//! Envy-freeness, max-min and proportional fairness over welfare vectors.
//!
//! The set-relative predicates compare a plan against a candidate set, which is
//! whatever set the caller discovered (the solver accumulator), not every
//! feasible plan. All three depend on plans only through their welfare
//! vectors, so callers pass welfare vectors and keep the plans alongside.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::plan::{AgentType, JointPlan};

pub const DEFAULT_WELFARE_FLOOR: f64 = 1e-9;

/// Absolute slack on the envy bound, so decimal boundaries such as
/// `|0.9 - 0.7| <= 0.2` hold despite binary rounding.
pub const ENVY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessConfig {
    /// Largest tolerated pairwise welfare gap.
    pub epsilon: f64,
    /// Denominator floor for proportional fairness.
    pub welfare_floor: f64,
    pub envy: bool,
    pub max_min: bool,
    pub proportional: bool,
}

impl FairnessConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            welfare_floor: DEFAULT_WELFARE_FLOOR,
            envy: true,
            max_min: true,
            proportional: true,
        }
    }

    /// The tolerance actually enforced: `epsilon`, or infinity with envy disabled.
    pub fn effective_epsilon(&self) -> f64 {
        if self.envy {
            self.epsilon
        } else {
            f64::INFINITY
        }
    }
}

/// True iff every pairwise gap `|W_i - W_j|` is at most `epsilon` (plus [`ENVY_SLACK`]).
pub fn is_envy_free(welfares: &[f64], epsilon: f64) -> bool {
    let (lo, hi) = welfares
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| (lo.min(w), hi.max(w)));
    welfares.is_empty() || hi - lo <= epsilon + ENVY_SLACK
}

/// Agent indices sorted by nondecreasing welfare; ties keep index order.
fn rank_by_welfare(welfares: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..welfares.len()).collect();
    order.sort_by(|&a, &b| welfares[a].total_cmp(&welfares[b]));
    order
}

/// False iff some candidate strictly raises the welfare of the agent at some
/// rank while keeping every lower-ranked agent at least as well off.
pub fn is_max_min_fair<'a>(plan: &[f64], candidates: impl IntoIterator<Item = &'a [f64]>) -> bool {
    let order = rank_by_welfare(plan);
    let candidates: Vec<&[f64]> = candidates.into_iter().collect();
    for (rank, &i) in order.iter().enumerate() {
        for other in &candidates {
            let improves = other[i] > plan[i];
            let preserves = order[..rank].iter().all(|&j| other[j] >= plan[j]);
            if improves && preserves {
                return false;
            }
        }
    }
    true
}

/// Outcome of a proportional-fairness test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Proportionality {
    pub fair: bool,
    /// Number of agents whose welfare was raised to the floor in the denominator.
    pub clamped: usize,
}

/// True iff no candidate has `sum_i (W'_i - W_i) / max(W_i, floor) > 0`.
pub fn is_proportionally_fair<'a>(
    plan: &[f64],
    candidates: impl IntoIterator<Item = &'a [f64]>,
    welfare_floor: f64,
) -> Proportionality {
    let clamped = plan.iter().filter(|&&w| w < welfare_floor).count();
    let fair = candidates.into_iter().all(|other| {
        let gain: f64 = plan
            .iter()
            .zip(other)
            .map(|(&w, &w2)| (w2 - w) / w.max(welfare_floor))
            .sum();
        gain <= 0.0
    });
    Proportionality { fair, clamped }
}

/// Indices of the candidates that survive the enabled set-relative predicates
/// (max-min and proportional), each evaluated against the original set.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FilterOutcome {
    pub kept: Vec<usize>,
    pub clamp_events: usize,
}

pub fn filter_fair(candidates: &[Vec<f64>], config: &FairnessConfig) -> FilterOutcome {
    // Duplicate welfare vectors can neither beat each other nor change the
    // verdict on anyone else, so each distinct vector is tested once.
    let mut classes: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut distinct: Vec<&[f64]> = Vec::new();
    let mut class_of = Vec::with_capacity(candidates.len());
    for w in candidates {
        let key: Vec<u64> = w.iter().map(|x| x.to_bits()).collect();
        let id = *classes.entry(key).or_insert_with(|| {
            distinct.push(w);
            distinct.len() - 1
        });
        class_of.push(id);
    }
    let mut clamp_events = 0;
    let verdict: Vec<bool> = distinct
        .iter()
        .map(|&w| {
            let mut ok = true;
            if config.proportional {
                let p = is_proportionally_fair(w, distinct.iter().copied(), config.welfare_floor);
                clamp_events += p.clamped;
                ok &= p.fair;
            }
            if config.max_min {
                ok &= is_max_min_fair(w, distinct.iter().copied());
            }
            ok
        })
        .collect();
    FilterOutcome {
        kept: (0..candidates.len()).filter(|&i| verdict[class_of[i]]).collect(),
        clamp_events,
    }
}

/// Plan-level convenience over [`filter_fair`].
pub fn filter_fair_plans(
    plans: &[JointPlan],
    agents: &[AgentType],
    config: &FairnessConfig,
) -> (Vec<JointPlan>, usize) {
    let w: Vec<Vec<f64>> = plans.iter().map(|p| p.welfares(agents).0).collect();
    let out = filter_fair(&w, config);
    (out.kept.iter().map(|&i| plans[i].clone()).collect(), out.clamp_events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn envy_examples() {
        assert!(is_envy_free(&[0.5, 0.5], 0.1));
        assert!(is_envy_free(&[0.9, 0.7], 0.2));
        assert!(!is_envy_free(&[0.9, 0.6], 0.2));
        assert!(is_envy_free(&[0.25, 0.5], 0.25));
        assert!(is_envy_free(&[0.3, 0.3], 0.0));
        assert!(!is_envy_free(&[0.3, 0.30001], 0.0));
    }

    #[test]
    fn max_min_examples() {
        let plan = [0.2, 0.9];
        assert!(is_max_min_fair(&plan, [&plan[..]]));
        assert!(!is_max_min_fair(&plan, [&[0.3, 0.9][..]]));
        assert!(is_max_min_fair(&[0.5, 0.5], [&[0.4, 0.9][..]]));
    }

    #[test]
    fn proportional_examples() {
        let plan = [1.0, 1.0];
        assert!(is_proportionally_fair(&plan, [&plan[..]], 1e-9).fair);
        assert!(is_proportionally_fair(&plan, [&[1.1, 0.85][..]], 1e-9).fair);
        assert!(!is_proportionally_fair(&plan, [&[1.2, 0.95][..]], 1e-9).fair);
    }

    #[test]
    fn proportional_clamps_nonpositive_welfare() {
        let p = is_proportionally_fair(&[0.0, 1.0], [&[0.0, 1.0][..]], 1e-9);
        assert_eq!(p, Proportionality { fair: true, clamped: 1 });
        assert!(!is_proportionally_fair(&[-0.5, 1.0], [&[-0.4, 1.0][..]], 1e-9).fair);
    }

    #[test]
    fn filter_examples() {
        let cfg = FairnessConfig::new(1.0);
        assert_eq!(filter_fair(&[vec![0.3, 0.4]], &cfg).kept, vec![0]);
        assert_eq!(filter_fair(&[vec![0.3, 0.4], vec![0.3, 0.4]], &cfg).kept, vec![0, 1]);
        // (0.5, 0.6) beats (0.4, 0.6) on the worst-off agent.
        assert_eq!(filter_fair(&[vec![0.4, 0.6], vec![0.5, 0.6]], &cfg).kept, vec![1]);
    }

    #[test]
    fn ablation_switches() {
        let mut cfg = FairnessConfig::new(1.0);
        cfg.max_min = false;
        cfg.proportional = false;
        assert_eq!(filter_fair(&[vec![0.4, 0.6], vec![0.5, 0.6]], &cfg).kept, vec![0, 1]);
        cfg.envy = false;
        assert_eq!(cfg.effective_epsilon(), f64::INFINITY);
    }

    fn welfare_sets() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..4).prop_flat_map(|n| {
            prop::collection::vec(prop::collection::vec((0u8..8).prop_map(|k| k as f64 / 8.0), n), 1..8)
        })
    }

    proptest! {
        #[test]
        fn envy_permutation_invariant_and_monotone(
            w in prop::collection::vec(-1.0f64..1.0, 1..6),
            eps in 0.0f64..1.0,
            extra in 0.0f64..1.0,
        ) {
            let mut rev = w.clone();
            rev.reverse();
            prop_assert_eq!(is_envy_free(&w, eps), is_envy_free(&rev, eps));
            if is_envy_free(&w, eps) {
                prop_assert!(is_envy_free(&w, eps + extra));
            }
        }

        #[test]
        fn filter_idempotent_against_original(set in welfare_sets()) {
            let cfg = FairnessConfig::new(f64::INFINITY);
            let kept = filter_fair(&set, &cfg).kept;
            // Re-test the survivors against the original set.
            let again: Vec<usize> = kept
                .iter()
                .copied()
                .filter(|&i| {
                    let orig = set.iter().map(|v| v.as_slice());
                    is_max_min_fair(&set[i], orig.clone())
                        && is_proportionally_fair(&set[i], orig, cfg.welfare_floor).fair
                })
                .collect();
            prop_assert_eq!(kept, again);
        }
    }
}
