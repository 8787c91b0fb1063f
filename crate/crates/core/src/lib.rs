//! Fairness-constrained multi-agent path finding on 4-connected grids.
//!
//! Two exact solvers, [`icts::fair_icts_solve`] and [`cbs::fair_cbs_solve`],
//! return the welfare-maximizing joint plan among the conflict-free plans that
//! are epsilon-envy-free, max-min fair and proportionally fair relative to the
//! candidates the search discovered. [`mechanism`] adds critical-value
//! payments on top of a solver's fair set, [`oracle`] is a brute-force
//! reference for small instances, and [`bench`] drives randomized experiments.

pub mod bench;
pub mod cbs;
pub mod fairness;
pub mod grid;
pub mod icts;
pub mod mapio;
pub mod mechanism;
pub mod oracle;
pub mod plan;
pub mod sassp;
pub mod solve;

pub use fairness::FairnessConfig;
pub use grid::{GridGraph, Vertex};
pub use mapio::InstanceSpec;
pub use plan::{AgentType, JointPlan, Path};
pub use solve::{Algorithm, SolveLimits, SolveResult, SolveStatus};
