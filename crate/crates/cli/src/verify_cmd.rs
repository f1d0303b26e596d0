//! `iwrl verify`: run the oracle and invariant suite, print a pass/fail
//! table, and write machine-readable JSONL. Exit 0 iff everything passes.

use crate::util::write_text;
use crate::{CliError, VerifyArgs};
use iwrl_core::verify::run_checks;
use std::fmt::Write as _;

pub fn run(args: VerifyArgs) -> Result<(), CliError> {
    let started = std::time::Instant::now();
    let results = run_checks();
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut jsonl = String::new();
    let mut failed = Vec::new();
    for r in &results {
        println!(
            "{:<width$}  {}  {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail
        );
        writeln!(
            jsonl,
            "{}",
            serde_json::json!({
                "name": r.name,
                "passed": r.passed,
                "detail": r.detail,
            })
        )
        .expect("string write");
        if !r.passed {
            failed.push(r.name);
        }
    }
    write_text(&args.output, &jsonl)?;
    println!(
        "verify: {}/{} checks passed in {:.1}s → {}",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64(),
        args.output.display()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "verification failed: {}",
            failed.join(", ")
        )))
    }
}
