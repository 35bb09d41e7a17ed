use std::process::ExitCode;

fn main() -> ExitCode {
    patchbench::cli::main_with_args(std::env::args_os())
}
