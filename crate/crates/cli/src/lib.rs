//! Batch front end: configuration, the `eval`, `grid`, `verify`, `solve`
//! and `fit` commands, and their CSV/JSON output.

pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

pub use commands::{cmd_eval, cmd_fit, cmd_grid, cmd_solve};
pub use config::{Config, Overrides};
pub use verify::cmd_verify;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o failure: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] kgq_core::Error),
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

impl CliError {
    /// Stable identifier printed with every error.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "E_CONFIG",
            CliError::Io(_) => "E_IO",
            CliError::Core(e) => e.code(),
            CliError::ChecksFailed(_) => "E_CHECK_FAILED",
        }
    }

    /// Process exit status: 1 for failed checks, 2 for bad input, 3 for numerical errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ChecksFailed(_) => 1,
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Core(_) => 3,
        }
    }
}

/// Runs `f` on a pool with `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        Some(0) => Err(CliError::Config("thread count must be positive".into())),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CliError::Config(format!("cannot start {t} threads: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}
