//! Runs the twelve acceptance criteria in order and prints one PASS/FAIL line
//! per criterion, followed by its per-check notes.
//!
//! Arguments: criterion ids (`cargo test -p bcopt-core --test acceptance -- 1 9`)
//! restrict the run. A name filter that does not match this target skips it.

use std::process::ExitCode;
use std::time::Instant;

use bcopt_core::validation::{run_criterion, CriterionResult};

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut ids: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let names: Vec<&String> = args.iter().filter(|a| a.parse::<u32>().is_err()).collect();
    if !names.is_empty() && !names.iter().any(|n| "acceptance".contains(n.as_str())) {
        return ExitCode::SUCCESS;
    }
    if ids.is_empty() {
        ids = (1..=12).collect();
    }
    let mut failed = Vec::new();
    for id in ids {
        let start = Instant::now();
        let r = run_criterion(id).unwrap_or_else(|e| CriterionResult {
            id,
            name: format!("criterion {id}"),
            pass: false,
            detail: format!("error: {e}"),
            notes: Vec::new(),
        });
        println!("{r}");
        println!("        ({:.1} s)", start.elapsed().as_secs_f64());
        if !r.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing criteria {failed:?}");
        ExitCode::FAILURE
    }
}
