//! Fluctuation dynamics of a driven-dissipative photon Bose-Einstein condensate
//! coupled to a dye-molecule reservoir.
//!
//! The crate covers the mean-field rate equations, the closed second-moment
//! hierarchy, the linearized two-component correlation dynamics that yield
//! g2(tau), exact small-system oracles (master-equation steady state, regression
//! and Gillespie trajectories), nonlinear fitting of the damped-oscillation
//! model, and the equilibrium spectrum of the trapped photon gas.
//!
//! Units: times in ns, rates in GHz, angular frequencies in rad/ns.

// `!(x > 0.0)` is the idiom used throughout to reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// dense and banded kernels read more clearly with explicit indices
#![allow(clippy::needless_range_loop)]

pub mod correlations;
pub mod error;
pub mod fitting;
pub mod io;
pub mod meanfield;
pub mod moments;
pub mod numeric;
pub mod oracle;
pub mod params;
pub mod presets;
pub mod spectrum;
pub mod units;

pub use correlations::{CouplingMatrix, EigenResult, G2Curve, G2Solution, GVector, Regime, Relaxation};
pub use error::{Error, ErrorKind, Result};
pub use fitting::{FitModel, FitResult, SweepRow, SweepTable};
pub use meanfield::{MeanFieldState, TimeSeries};
pub use moments::{ClosureForm, MomentSolution, MomentState, Ordering};
pub use oracle::{Channel, DistributionGrid, Generator, Trajectory};
pub use params::{kennard_stepanov, validate, ModelParams, ParamsBuilder};
pub use spectrum::{SpectrumCurve, TrapModel};
pub use units::UnitConvention;
