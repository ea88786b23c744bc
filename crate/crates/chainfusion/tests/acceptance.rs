//! Acceptance suite: one pass/fail line per criterion, all must pass.
//!
//! Runs as a single test so the runtime-ratio measurement is not disturbed
//! by parallel test threads.

use chainfusion::check::run_suite;

#[test]
fn acceptance_criteria() {
    let reports = run_suite(None);
    let mut failed = Vec::new();
    for r in &reports {
        println!(
            "criterion {:2} [{}] {:<30} {} ({:.1} s)",
            r.id,
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.details,
            r.seconds
        );
        if !r.passed {
            failed.push(r.id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
