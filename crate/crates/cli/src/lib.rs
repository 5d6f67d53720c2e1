//! Command-line harness over `msf-core`: scene generation, pooling
//! verification against the exhaustive oracle, recall tables, latency
//! benchmarks and full forward runs. Every command writes a `manifest.json`
//! next to its outputs.
//!
//! Exit codes: 0 success, 2 verification mismatch, 3 config or input error,
//! 4 I/O error.

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;
pub mod scene_dir;
pub mod verify;

use std::ffi::OsString;

use clap::Parser;
use msf_core::par;

pub use args::{Cli, Command};
pub use commands::{
    cmd_bench, cmd_gen, cmd_init_weights, cmd_recall, cmd_run, cmd_verify, Outcome,
};
pub use error::{CliError, EXIT_CONFIG, EXIT_IO, EXIT_MISMATCH, EXIT_OK};
pub use manifest::RunManifest;
pub use verify::{verify_pooling, VerifyOptions, VerifyReport};

pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    let workers = cli.threads.unwrap_or(all).max(1);
    match &cli.command {
        Command::Bench(a) => cmd_bench(a, cli.threads.unwrap_or(1).max(1)),
        command => par::with_workers(workers, || match command {
            Command::Gen(a) => cmd_gen(a),
            Command::Verify(a) => cmd_verify(a).map(|(o, _)| o),
            Command::Recall(a) => cmd_recall(a),
            Command::Run(a) => cmd_run(a),
            Command::InitWeights(a) => cmd_init_weights(a),
            Command::Bench(_) => unreachable!("handled above"),
        }),
    }
}

/// Parses `args`, runs the command and reports on stdout/stderr. Returns the
/// process exit code.
pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
