//! File formats, configuration and the `geomreg` command-line tool built on
//! [`geomreg_core`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod commands;
pub mod config;
mod error;
pub mod exec;
pub mod formats;
pub mod io;
pub mod manifest;
pub mod svg;

pub use error::{CliError, Result};

use cli::{Cli, Command};

/// Dispatches a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => commands::cmd_simulate(a, cli.threads).map(|_| ()),
        Command::Fit(a) => commands::cmd_fit(a, cli.threads),
        Command::Tune(a) => commands::cmd_tune(a, cli.threads),
        Command::Validate(a) => commands::cmd_validate(a, cli.threads),
        Command::Contours(a) => commands::cmd_contours(a),
    }
}
