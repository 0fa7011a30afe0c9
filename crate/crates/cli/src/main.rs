use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(stssm_cli::run(std::env::args_os()) as u8)
}
