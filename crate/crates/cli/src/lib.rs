//! Experiment driver: every subcommand reads files, writes files and a
//! `manifest.json`, and maps failures to a documented exit code.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success, all outputs written |
//! | 1 | unexpected internal error |
//! | 2 | usage or configuration error |
//! | 3 | file system error |
//! | 4 | malformed or unsuitable input data |
//! | 5 | numerical failure (zero variance, non-finite loss or gradient, degenerate statistic) |

pub mod args;
pub mod commands;
pub mod manifest;
pub mod pgm;

use std::fmt;

use wildfire_core::Error;

pub use args::Cli;
use args::Command;
use commands::Context;

pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DATA: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

/// Invalid flag combination or value detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io(_) => EXIT_IO,
                Error::Config(_) => EXIT_USAGE,
                Error::ZeroVariance { .. } | Error::NonFiniteGradient(_) | Error::NonFiniteLoss { .. } | Error::Degenerate(_) => {
                    EXIT_NUMERIC
                }
                _ => EXIT_DATA,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_INTERNAL
}

/// Caps rayon's pool at `FIRECLI_THREADS` when set.
pub fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("FIRECLI_THREADS") {
        let n: usize = v.parse().map_err(|_| UsageError(format!("FIRECLI_THREADS={v:?} is not a thread count")))?;
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("rayon pool already initialised");
        }
    }
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = Context::new(cli.global)?;
    match &cli.command {
        Command::Ingest(a) => commands::ingest(&ctx, a).map(drop),
        Command::TrainFcn(a) => commands::train_fcn(&ctx, a).map(drop),
        Command::Eval(a) => commands::eval(&ctx, a).map(drop),
        Command::Predict(a) => commands::predict(&ctx, a).map(drop),
        Command::Segment(a) => commands::segment(&ctx, a).map(drop),
        Command::Sensitivity(a) => commands::sensitivity(&ctx, a).map(drop),
        Command::Stats(a) => commands::stats(&ctx, a).map(drop),
        Command::Eda(a) => commands::eda(&ctx, a).map(drop),
    }
}
