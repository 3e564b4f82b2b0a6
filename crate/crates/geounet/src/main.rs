use std::process::ExitCode;

fn main() -> ExitCode {
    geounet::cli::run()
}
