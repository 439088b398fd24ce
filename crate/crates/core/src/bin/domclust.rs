use std::panic;
use std::process::ExitCode;

fn main() -> ExitCode {
    let code = panic::catch_unwind(|| domclust::cli::run_from(std::env::args_os())).unwrap_or(2);
    ExitCode::from(code as u8)
}
