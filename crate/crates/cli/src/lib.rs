//! Pipeline orchestration, file formats, and artifact export for the
//! multifidelity topology design loop.
//!
//! The numerical kernels live in `mftd-core`; this crate wires them into a
//! reproducible end-to-end run:
//!
//! - [`config`]: flat `key = value` run configuration
//! - [`pipeline`]: seeding, the design loop, and checkpointable run state
//! - [`artifacts`]: CSV/PNG/JSON export and checkpoint IO
//! - [`meshio`]: plain-text surface-patch mesh format for the `map` command
//! - [`error`]: process-level error taxonomy and exit codes

pub mod artifacts;
pub mod config;
pub mod error;
pub mod meshio;
pub mod pipeline;

pub use config::RunConfig;
pub use error::CliError;
pub use pipeline::{run_mftd, seed_initial_population, DesignSample, RunState};
