//! Exact small-system oracles: the diagonal master equation as a jump process
//! on `(n, M_up)`, its stationary distribution, regression g2 and Gillespie
//! sample paths.

mod estimator;
mod generator;
mod gillespie;
mod regression;
mod steady;

pub use estimator::{default_burn_in, ensemble_g2, trajectory_g2, EnsembleConfig, EstimatorOptions, TrajectoryEstimate, MAX_GROUPS};
pub use generator::{build_generator, Channel, Generator, DEFAULT_STATE_CAP};
pub use gillespie::{gillespie_ensemble, gillespie_simulate, stream_rng, Jump, LatticeState, Trajectory};
pub use regression::oracle_g2;
pub use steady::{
    initial_n_max, oracle_steady_state, oracle_steady_state_auto, verify_truncation_identity, DistributionGrid,
    ExactMoments, OracleSteadyState, TruncationReport, TAIL_TOL,
};
