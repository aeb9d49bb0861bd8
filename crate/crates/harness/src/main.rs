use std::process::ExitCode;

fn main() -> ExitCode {
    gridguard_harness::cli::run(std::env::args_os())
}
