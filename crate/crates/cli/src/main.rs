use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use jetstorm_cli::alloc::CountingAlloc;
use jetstorm_cli::{run, Cli, EXIT_USAGE};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("JETSTORM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE as u8),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("jetstorm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
