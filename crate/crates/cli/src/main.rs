use std::process::ExitCode;

use bcopt_cli::{execute, Cli};
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match execute(cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bcopt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
