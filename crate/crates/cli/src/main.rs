use std::process::ExitCode;

use clap::Parser;

use tandem_cli::Cli;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TANDEM_LOG", "info")).init();
    let cli = Cli::parse();
    match tandem_cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
