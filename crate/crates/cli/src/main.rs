use std::process::ExitCode;

use clap::Parser;
use shtrans_cli::{exit_code, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(m) => {
            println!("{} done: {} outputs, output hash {}", m.subcommand, m.outputs.len(), m.output_hash);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
