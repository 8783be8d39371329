mod cli;
mod commands;
mod config;
mod exit;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use cli::Cli;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::from(exit::OK as u8);
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            return ExitCode::from(exit::USAGE as u8);
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid usage");
            let msg = first.trim_start_matches("error: ");
            eprintln!("{}", exit::error_line("usage", exit::USAGE, msg));
            return ExitCode::from(exit::USAGE as u8);
        }
    };

    log::debug!("running {}", cli.command.name());
    match commands::run(&cli.command) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(err) => {
            let (kind, code) = exit::classify(&err);
            eprintln!("{}", exit::error_line(kind, code, &format!("{err:#}")));
            ExitCode::from(code as u8)
        }
    }
}
