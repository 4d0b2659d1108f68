//! Particle and grid solvers for the FitzHugh-Nagumo mean-field model with
//! strong local coupling, and its reaction-diffusion limit.

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod harness;
pub mod kernel_ops;
pub mod linalg;
pub mod macro_solver;
pub mod model;
pub mod particle;
pub mod profiles;
pub mod quadrature;

pub use error::{Error, Result};
pub use grid::{Boundary, GridSpec, ScalarField};
pub use model::{FhnParams, KernelFamily, KernelSpec, NonlinearityConstants};
