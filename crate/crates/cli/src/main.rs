use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(sparsect_cli::run(std::env::args_os(), sparsect_cli::app::env_output()))
}
