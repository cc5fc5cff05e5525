//! `shtrans` command-line front end: dataset generation, ridge LSM,
//! TT-Net training, evaluation sweeps and field rendering. Each run writes
//! its outputs and a `manifest.json` into the directory given by `--out`.

pub mod args;
pub mod commands;
pub mod manifest;
pub mod methods;

use shtrans_core::{Error, Result};

pub use args::{Cli, Command};
pub use manifest::RunManifest;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

pub fn run(cli: &Cli) -> Result<RunManifest> {
    match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Lsm(a) => commands::lsm(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Render(a) => commands::render(a),
    }
}

/// Process exit code of each failure class. Usage errors caught by the
/// argument parser also exit with [`EXIT_CONFIG`].
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::ShapeMismatch(_)
        | Error::InvalidIndex { .. }
        | Error::IndexOutOfRange { .. }
        | Error::Json(_) => EXIT_CONFIG,
        Error::Io(_) | Error::Format(_) | Error::Checksum { .. } => EXIT_IO,
        Error::Numerical(_) | Error::ZeroSignal | Error::ZeroVector | Error::ZeroReference => EXIT_NUMERICAL,
    }
}
