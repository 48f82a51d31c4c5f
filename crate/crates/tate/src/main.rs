use std::process::ExitCode;

fn main() -> ExitCode {
    match tate::cli::run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
