use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use flashmeans_cli::{exit_code, init_workers, run, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(flashmeans_cli::error::EXIT_USAGE as u8),
            };
        }
    };
    let stdout = std::io::stdout();
    let result = init_workers().and_then(|()| run(cli, &mut stdout.lock()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
