use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = affuse::cli::Cli::parse();
    match affuse::cli::run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
