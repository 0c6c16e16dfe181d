//! Driver for the `acr` binary: configuration, the solve pipeline, sweeps
//! and report encodings.

pub mod alloc;
pub mod config;
pub mod report;
pub mod run;

pub use config::{Format, Mode, Precision, RhsKind, RunConfig};
pub use report::{FactorReport, SolveReport, SweepPoint};
pub use run::{run, sweep, CliError};
