//! Porous medium equation with a drift potential,
//!
//! `rho_t = lap(rho^m) + div(rho grad Phi)`, `m > 1`,
//!
//! and its pressure form `u = m/(m-1) rho^(m-1)`. The crate provides a
//! mass-conservative explicit solver, closed-form barrier families with a
//! residual checker, and free-boundary diagnostics (support extraction,
//! Hausdorff distance, the mass-matched equilibrium `(C - Phi)_+`).

pub mod barriers;
pub mod cli;
pub mod error;
pub mod field;
pub mod freeboundary;
pub mod grid;
pub mod potential;
pub mod solver;

pub use error::{PmedError, Result};
pub use field::{density_from_pressure, integrate, pressure_from_density, Field, Variable};
pub use grid::Grid;
pub use potential::Potential;
pub use solver::{cfl_dt, comparison_harness, simulate, step_density, weak_residual, SolverConfig, Trajectory};
