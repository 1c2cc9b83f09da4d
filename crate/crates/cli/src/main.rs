use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(darp_cli::cli::main_with(std::env::args_os()))
}
