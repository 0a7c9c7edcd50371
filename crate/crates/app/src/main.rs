use std::process::ExitCode;

fn main() -> ExitCode {
    pcr_app::cli::run(std::env::args_os())
}
