//! Independent reference solvers: finite differences and Monte Carlo on the
//! finite-state system, and field comparison.

pub mod compare;
pub mod fd;
pub mod mc;

pub use compare::{compare, CompareEntry, CompareReport, Norm};
pub use fd::{default_half_width, fd_solve, fd_solve_sampled, FdGrid};
pub use mc::{estimate_density, mc_simulate, DensityEstimator, PathEnsemble};
