use std::process::ExitCode;

fn main() -> ExitCode {
    bathy_cli::run(std::env::args_os())
}
