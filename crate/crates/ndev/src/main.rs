use std::process::ExitCode;

fn main() -> ExitCode {
    ndev::cli::main()
}
