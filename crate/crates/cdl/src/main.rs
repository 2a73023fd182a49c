use std::process::ExitCode;

fn main() -> ExitCode {
    cdl::cli::run()
}
