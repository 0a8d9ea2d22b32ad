//! The `sarjepa` command line: `gen`, `features`, `pretrain`, `probe`, `attn`
//! and `sweep`. Values resolve as flags > config file > defaults. Exit codes:
//! 0 success, 1 usage or validation error, 2 numerical divergence.

mod args;
mod commands;
mod config;
mod manifest;
mod sweep;

pub use args::{Cli, Command, CommonArgs, FeatureArgs, MaskArgs, ProbeArgs};
pub use commands::{run_attn, run_features, run_gen, run_pretrain, run_probe, GenConfig};
pub use config::{parse_csv_list, resolve_pretrain, resolve_probe, PretrainRun, ProbeRunConfig};
pub use manifest::{hash_inputs, RunManifest};
pub use sweep::{resolve_sweep, run_sweep, subset_indices, ModelSize, SweepAxes, SweepConfig, SweepPoint, SweepRow};

use clap::{CommandFactory, Parser};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;

/// Parses `argv` (program name first) and runs the subcommand.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return EXIT_OK;
            }
            if !e.render().to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return EXIT_INVALID;
        }
    };
    match commands::run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if !e.is_divergence() {
                let mut cmd = Cli::command();
                if let Some(sub) = cmd.find_subcommand_mut(cli.command.name()) {
                    eprintln!("\n{}", sub.render_usage());
                }
            }
            exit_code(&e)
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_divergence() {
        EXIT_DIVERGED
    } else {
        EXIT_INVALID
    }
}
