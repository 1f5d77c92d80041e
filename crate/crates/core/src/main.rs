use std::process::ExitCode;

fn main() -> ExitCode {
    lqbridge::cli::main_with_args(std::env::args_os())
}
