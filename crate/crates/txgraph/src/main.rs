use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(txgraph::cli::run(std::env::args_os()))
}
