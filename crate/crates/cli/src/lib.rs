//! Command-line driver for the trajectory model: dataset generation,
//! training, evaluation and single-sample prediction.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{eval, gen_data, predict, train, EvalArgs, GenDataArgs, PredictArgs, TrainArgs};
pub use config::{Overrides, RunConfig};
pub use error::{exit, CliError, CliResult};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "GMT_NUM_THREADS";

/// Size the global thread pool from [`THREADS_ENV`] when it is set.
pub fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("{THREADS_ENV}: {e}")))
}
