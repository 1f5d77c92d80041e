//! Independent checks: a transcribed optimal control problem for the
//! distance, a finite-difference PDE residual for the kernel, and Monte Carlo
//! for the kernel transforms.

mod bvp;
mod feynman_kac;
mod pde;
pub mod validation;

pub use bvp::{solve_bvp_ocp, BvpSolver, OcpSolution};
pub use feynman_kac::{feynman_kac, feynman_kac_with, simulate_killed_diffusion, FkEstimate, WeightedPath};
pub use pde::pde_residual;
pub use validation::{validation_suite, write_report, ValidationOptions, ValidationRecord};
