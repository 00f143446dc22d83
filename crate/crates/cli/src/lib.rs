//! Batch driver for dataset distillation runs: configuration, orchestration
//! and CSV/SVG/JSON emission around `dap-core`.

pub mod ablate;
pub mod app;
pub mod config;
pub mod context;
pub mod distill;
pub mod evaluate;
pub mod scatter;
pub mod svg;
pub mod train;

use std::fmt;

pub use config::RunConfig;
pub use context::Workspace;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Bad command line: unknown subcommand, missing argument, malformed
/// override.
#[derive(Debug, Clone)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A property check that ran and failed.
#[derive(Debug, Clone)]
pub struct CheckFailed(pub String);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "self-check failed: {}", self.0)
    }
}

impl std::error::Error for CheckFailed {}

/// Maps an error chain to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<CheckFailed>() {
            return EXIT_NUMERICAL;
        }
        if let Some(e) = cause.downcast_ref::<dap_core::Error>() {
            return if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_VALIDATION };
        }
    }
    EXIT_VALIDATION
}
