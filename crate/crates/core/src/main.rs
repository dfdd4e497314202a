use std::process::ExitCode;

fn main() -> ExitCode {
    let code = std::panic::catch_unwind(|| actshift::cli::run(std::env::args_os())).unwrap_or(1);
    ExitCode::from(u8::try_from(code).unwrap_or(1))
}
