//! Configuration, experiment orchestration, rate fits, report files and the CLI.

pub mod cli;
pub mod config;
pub mod fit;
pub mod identities;
pub mod output;
pub mod sweep;

pub use config::Config;
pub use fit::{fit_rate, RateFit};
pub use identities::{check_identities, IdentityReport};
pub use sweep::{run_convergence_sweep, EpsResult, SweepReport};
