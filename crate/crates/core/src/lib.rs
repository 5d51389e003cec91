//! Q-learning for discrete-time LQ control with multiplicative noise of
//! unknown statistics.
//!
//! - [`lq`]: system types, the Π and Γ maps, the ground-truth oracle and
//!   mean-square stability.
//! - [`sampling`]: seeded noise, realizations, trajectories, Monte Carlo cost.
//! - [`qlearning`]: the centralized stochastic-approximation learner.
//! - [`network`]: graphs, Laplacian mixing and per-sensor gains.
//! - [`distributed`]: the consensus-plus-innovation learner.

pub mod distributed;
pub mod lq;
pub mod network;
pub mod qlearning;
pub mod sampling;
pub mod trace;

pub use distributed::{
    compare_centralized, distributed_round, run_distributed, CompareError, Comparison,
    DistributedOptions, Initialization, RoundNoise, SensorBank,
};
pub use lq::{
    expectation_map, gamma_map, ms_stability_check, optimal_gain_closed_form, pi_map,
    riccati_residual, solve_oracle, Gain, LqError, Matrix, ModelError, MsStability, NoiseModel,
    OracleSolution, QFactor, SystemModel, Vector,
};
pub use network::{
    allocate_gains, build_graph, consensus_operator, ConsensusOperator, GainAllocation, GainMode,
    Graph, NetworkError, Topology,
};
pub use qlearning::{centralized_step, run_centralized, y_operator, LearnerState, Schedule, ScheduleError};
pub use sampling::{
    draw_noise, monte_carlo_cost, realize, simulate_trajectory, CostEstimate, Realization,
    RngStream, SamplingError, Trajectory,
};
pub use trace::{Diverged, DivergedRun, RoundRecord, RunKind, RunTrace, SensorRecord};
