//! Markov kernels, Schrödinger bridges and distances for linear time-varying
//! diffusions `dx = A x dt + √2 B dw` killed at rate `½ xᵀQx`.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod density;
pub mod error;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod ltv_system;
pub mod ode;
pub mod oracle;
pub mod riccati;
pub mod sinkhorn;

pub use error::{Error, Result};
pub use kernel::{KernelConfig, KernelEvaluator};
pub use ltv_system::{LtvSystem, MatrixTrajectory, StepPolicy};
