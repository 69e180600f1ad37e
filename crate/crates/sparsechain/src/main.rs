use std::process::ExitCode;

fn main() -> ExitCode {
    sparsechain::cli::main()
}
