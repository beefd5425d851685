use std::process::ExitCode;

fn main() -> ExitCode {
    ebmtobit::cli::run()
}
