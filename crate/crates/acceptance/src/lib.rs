//! Runner for the acceptance suite: every criterion prints one PASS or FAIL
//! line with its measurements and wall time.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

/// Result of one criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Verdict {
            passed,
            detail: detail.into(),
        }
    }
}

/// Runs `check`, prints its line and returns whether it passed.
///
/// A panic counts as a failure, as does exceeding `budget`.
pub fn run_criterion(number: usize, name: &str, budget: Duration, check: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Verdict::new(false, format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let passed = verdict.passed && in_time;
    let timing = if in_time {
        format!("{:.1}s", elapsed.as_secs_f64())
    } else {
        format!("{:.1}s, over the {}s budget", elapsed.as_secs_f64(), budget.as_secs())
    };
    println!(
        "{} [{number:>2}] {name}: {} ({timing})",
        if passed { "PASS" } else { "FAIL" },
        verdict.detail
    );
    passed
}
