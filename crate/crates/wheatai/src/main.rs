use std::process::ExitCode;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use wheatai_gateway::cli::{self, Cli, Command};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("WHEATAI_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let code = match &cli.command {
        Command::Run(args) => cli::run(args),
        Command::Serve(args) => cli::serve(args),
    };
    ExitCode::from(code)
}
