//! Numerical laboratory for blow-up in radial quasilinear Keller–Segel
//! systems: exact exponent bookkeeping, a graded radial finite-volume
//! discretization, an adaptive semi-implicit solver, blow-up profile
//! analysis, and the experiment runner behind the `kslab` binary.

pub mod exponents;
pub mod grid;
pub mod kinetics;
pub mod profile;
pub mod real;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod solver;
pub mod tridiag;
pub mod verify;
