use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(bodyatlas_cli::run(std::env::args_os()))
}
