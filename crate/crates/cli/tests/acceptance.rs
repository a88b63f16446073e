//! Runs every acceptance criterion and prints one line per criterion.

use std::process::ExitCode;

use scmf_cli::verify::run_all;

fn main() -> ExitCode {
    let reports = match run_all(None, |r| println!("{r}  ({:.1}s)", r.elapsed.as_secs_f64())) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("acceptance: {} passed, {failed} failed", reports.len() - failed);
    if failed == 0 && reports.len() == 10 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
