//! Numerical building blocks shared by the solvers.

pub mod banded;
pub mod compensated;
pub mod lsq;
pub mod ode;
pub mod roots;

pub use banded::{BandLu, BandMatrix};
pub use lsq::{levenberg_marquardt, LeastSquares, LmOptions, LmReport, LmStop};
pub use ode::{integrate, OdeOptions, OdeSolution, OdeSystem, Tolerances};
pub use roots::{bisect, brent, RootOptions};
