//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Runs without the libtest harness so every line prints
//! even when an early criterion fails.

use std::path::Path;
use std::process::ExitCode;

use critmat_validation::criteria;

fn main() -> ExitCode {
    let figure = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cocycle_grid.csv");
    println!("acceptance: {} criteria, seed {}, {} worker(s)", 10, criteria::SEED, criteria::WORKERS);
    let outcomes = criteria::run_all(&figure, |o| println!("{o}"));
    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    let total: f64 = outcomes.iter().map(|o| o.seconds).sum();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass in {total:.0} s", outcomes.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} of {} pass; failing criteria {failed:?} ({total:.0} s)", outcomes.len() - failed.len(), outcomes.len());
        ExitCode::FAILURE
    }
}
