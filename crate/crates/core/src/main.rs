use std::process::ExitCode;

fn main() -> ExitCode {
    match uhead::cli::dispatch(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
