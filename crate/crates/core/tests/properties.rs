//! Property tests over seeded small instances, checked against the oracle.

mod common;

use std::collections::BTreeSet;

use fairmapf::cbs::{fair_cbs_solve, fair_cbs_solve_with, sic};
use fairmapf::fairness::{filter_fair, is_envy_free, is_max_min_fair, is_proportionally_fair};
use fairmapf::icts::{build_dag, fair_icts_solve, fair_icts_solve_with, joint_product_paths};
use fairmapf::mapio::sample_agents;
use fairmapf::oracle::{enumerate_feasible, expected_icts_outcome, walks, OracleFairness};
use fairmapf::plan::check_feasible;
use fairmapf::sassp::{constrained_shortest_path, shortest_steps, SpaceTimeConstraint};
use fairmapf::{FairnessConfig, GridGraph, JointPlan, SolveStatus, Vertex};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{small_instance, small_limits, HORIZON};

fn instance_seed() -> impl Strategy<Value = u64> {
    (1u64..5_000).prop_filter("seed yields a small instance", |s| small_instance(*s).is_some())
}

fn sorted(w: &[f64]) -> Vec<f64> {
    let mut v = w.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn leximin_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in sorted(a).iter().zip(sorted(b).iter()) {
        if (x - y).abs() > 1e-9 {
            return x.total_cmp(y);
        }
    }
    std::cmp::Ordering::Equal
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn returned_plans_are_feasible_fair_and_serve_their_agents(seed in instance_seed()) {
        let inst = small_instance(seed).unwrap();
        let limits = small_limits();
        for r in [fair_icts_solve(&inst, &limits).unwrap(), fair_cbs_solve(&inst, &limits).unwrap()] {
            let Some(plan) = &r.plan else { continue };
            prop_assert!(check_feasible(plan).is_empty());
            prop_assert!(plan.paths.iter().zip(&inst.agents).all(|(p, a)| p.serves(a)));
            let w = plan.welfares(&inst.agents).0;
            prop_assert!(is_envy_free(&w, inst.epsilon));
            let set: Vec<Vec<f64>> = r.candidates.iter().map(|p| p.welfares(&inst.agents).0).collect();
            prop_assert!(is_max_min_fair(&w, set.iter().map(Vec::as_slice)));
            prop_assert!(is_proportionally_fair(&w, set.iter().map(Vec::as_slice), 1e-9).fair);
        }
    }

    #[test]
    fn icts_matches_the_cheapest_envy_free_stratum(seed in instance_seed()) {
        let inst = small_instance(seed).unwrap();
        let r = fair_icts_solve(&inst, &small_limits()).unwrap();
        let expected = expected_icts_outcome(&inst, HORIZON, &OracleFairness::new(inst.epsilon)).unwrap();
        match (r.social_welfare, expected.social_welfare) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-9),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn icts_bounds_strictly_increase(seed in instance_seed()) {
        let inst = small_instance(seed).unwrap();
        let r = fair_icts_solve(&inst, &small_limits()).unwrap();
        prop_assert!(r.stats.bounds.windows(2).all(|w| w[0] < w[1]), "{:?}", r.stats.bounds);
    }

    #[test]
    fn cbs_candidates_include_a_minimum_sic_plan(seed in instance_seed()) {
        // With every fairness test off, the first leaf is the classic CBS optimum.
        let inst = small_instance(seed).unwrap();
        let off = FairnessConfig { envy: false, max_min: false, proportional: false, ..FairnessConfig::new(inst.epsilon) };
        let r = fair_cbs_solve_with(&inst, &small_limits(), &off).unwrap();
        prop_assume!(r.status.is_complete());
        let feasible = enumerate_feasible(&inst, HORIZON).unwrap();
        let best = feasible.iter().map(|p| sic(p, &inst.agents)).fold(f64::INFINITY, f64::min);
        let found = r.candidates.iter().map(|p| sic(p, &inst.agents)).fold(f64::INFINITY, f64::min);
        prop_assert!((best - found).abs() <= 1e-9 || (best.is_infinite() && found.is_infinite()));
    }

    #[test]
    fn oracle_feasible_set_is_the_union_of_joint_products(seed in instance_seed()) {
        // Full materialization; a shorter horizon keeps the sets small.
        const H: usize = 4;
        let inst = small_instance(seed).unwrap();
        let oracle: BTreeSet<JointPlan> = enumerate_feasible(&inst, H).unwrap().into_iter().collect();
        let n = inst.num_agents();
        let mut product = BTreeSet::new();
        let mut steps = vec![0usize; n];
        loop {
            let dags: Vec<_> = inst.agents.iter().zip(&steps).map(|(a, &s)| build_dag(&inst.map, a, s)).collect();
            product.extend(joint_product_paths(&dags));
            let Some(i) = steps.iter().position(|&s| s < H) else { break };
            steps[i] += 1;
            for s in &mut steps[..i] {
                *s = 0;
            }
        }
        prop_assert_eq!(oracle, product);
    }

    #[test]
    fn unconstrained_filter_keeps_only_leximin_maximal_plans(seed in instance_seed()) {
        let inst = small_instance(seed).unwrap();
        let feasible = enumerate_feasible(&inst, 4).unwrap();
        prop_assume!(!feasible.is_empty());
        let set: Vec<Vec<f64>> = feasible.iter().map(|p| p.welfares(&inst.agents).0).collect();
        let config = FairnessConfig { envy: false, ..FairnessConfig::new(f64::INFINITY) };
        let kept = filter_fair(&set, &config).kept;
        let best = set.iter().max_by(|a, b| leximin_cmp(a, b)).unwrap();
        for i in kept {
            prop_assert_eq!(leximin_cmp(&set[i], best), std::cmp::Ordering::Equal);
        }
    }

    #[test]
    fn shortest_path_plans_never_clamp(seed in any::<u64>(), n in 1usize..5) {
        let map = GridGraph::open(5, 5);
        let agents = sample_agents(&map, n, seed).unwrap();
        let w: Vec<f64> = agents
            .iter()
            .map(|a| a.welfare_at(shortest_steps(&map, a.start, a.goal).unwrap()))
            .collect();
        prop_assert!(is_proportionally_fair(&w, [w.as_slice()], 1e-9).clamped == 0);
    }

    #[test]
    fn space_time_search_is_optimal_sound_and_monotone(
        w in 1usize..=4,
        h in 1usize..=4,
        seed in any::<u64>(),
        extra in prop::collection::vec((0usize..16, 0usize..8), 0..4),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = GridGraph::new(w, h, (0..w * h).map(|_| rng.gen::<f64>() > 0.2).collect());
        let Ok(agents) = sample_agents(&map, 1, seed) else { return Ok(()) };
        let agent = &agents[0];
        let cells: Vec<Vertex> = map.passable_vertices().collect();
        let constraints: Vec<SpaceTimeConstraint> = extra
            .iter()
            .map(|&(c, t)| SpaceTimeConstraint::vertex(0, cells[c % cells.len()], t))
            .collect();
        let max_steps = 8;
        let respects = |p: &fairmapf::Path, cs: &[SpaceTimeConstraint]| {
            cs.iter().all(|c| p.at(c.time) != Some(c.vertex))
        };
        let brute = (0..=max_steps).find(|&s| walks(&map, agent, s).iter().any(|p| respects(p, &constraints)));
        let found = constrained_shortest_path(&map, agent, &constraints, max_steps);
        prop_assert_eq!(found.as_ref().map(|p| p.len()), brute);
        if let Some(p) = &found {
            prop_assert!(respects(p, &constraints));
            prop_assert!(p.serves(agent));
        }
        let fewer = constrained_shortest_path(&map, agent, &constraints[..constraints.len().saturating_sub(1)], max_steps);
        let len = |p: Option<fairmapf::Path>| p.map_or(usize::MAX, |p| p.len());
        prop_assert!(len(fewer) <= len(found));
    }
}

#[test]
fn icts_and_cbs_agree_on_the_crossing_instance() {
    let map = GridGraph::open(2, 2);
    let v = |x, y| map.vertex(x, y).unwrap();
    let agents = vec![
        fairmapf::AgentType::new(0, v(0, 0), v(1, 1), 1.0, 0.1).unwrap(),
        fairmapf::AgentType::new(1, v(1, 1), v(0, 0), 1.0, 0.1).unwrap(),
    ];
    let inst = fairmapf::InstanceSpec::new(map, agents, 0, 1.0).unwrap();
    let fairness = FairnessConfig::new(1.0);
    let a = fair_icts_solve_with(&inst, &small_limits(), &fairness).unwrap();
    let b = fair_cbs_solve_with(&inst, &small_limits(), &fairness).unwrap();
    assert_eq!(a.status, SolveStatus::Solved);
    assert!((a.social_welfare.unwrap() - 1.6).abs() < 1e-9);
    assert!((b.social_welfare.unwrap() - 1.6).abs() < 1e-9);
}
