//! Seeded small-instance corpus shared by the integration tests.
#![allow(dead_code)]

use std::time::Duration;

use fairmapf::mapio::sample_agents;
use fairmapf::sassp::shortest_steps;
use fairmapf::{GridGraph, InstanceSpec, SolveLimits};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Longest path any agent may take in the small corpus.
pub const HORIZON: usize = 6;

pub const EPSILONS: [f64; 5] = [0.0, 0.1, 0.25, 0.5, 1.0];

/// A map of at most 4x4 cells with about 15% obstacles, 2 or 3 agents whose
/// shortest paths fit the horizon, and an epsilon from [`EPSILONS`].
/// `None` when the seed does not yield such an instance.
pub fn small_instance(seed: u64) -> Option<InstanceSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rng.gen_range(2..=4);
    let h = rng.gen_range(2..=4);
    let passable: Vec<bool> = (0..w * h).map(|_| rng.gen::<f64>() > 0.15).collect();
    let map = GridGraph::new(w, h, passable);
    let n = rng.gen_range(2..=3);
    let eps = EPSILONS[rng.gen_range(0..EPSILONS.len())];
    let agents = sample_agents(&map, n, seed).ok()?;
    for a in &agents {
        if shortest_steps(&map, a.start, a.goal).ok()? > HORIZON {
            return None;
        }
    }
    InstanceSpec::new(map, agents, seed, eps).ok()
}

/// The first `count` instances produced by seeds 1, 2, ...
pub fn corpus(count: usize) -> Vec<InstanceSpec> {
    (1..).filter_map(small_instance).take(count).collect()
}

pub fn small_limits() -> SolveLimits {
    SolveLimits {
        time_limit: Some(Duration::from_secs(10)),
        max_agent_steps: Some(HORIZON),
        ..SolveLimits::default()
    }
}
