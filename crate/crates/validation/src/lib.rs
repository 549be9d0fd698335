//! PASS/FAIL bookkeeping for the acceptance suite.

use std::time::{Duration, Instant};

#[derive(Debug, Default)]
pub struct Checklist {
    results: Vec<(String, bool)>,
}

impl Checklist {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one criterion and prints its line immediately.
    pub fn record(&mut self, id: &str, pass: bool, detail: impl AsRef<str>) {
        println!("{} {id}: {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
        self.results.push((id.to_string(), pass));
    }

    pub fn failures(&self) -> Vec<&str> {
        self.results.iter().filter(|(_, p)| !p).map(|(id, _)| id.as_str()).collect()
    }

    /// Prints the summary and returns the process exit status.
    pub fn finish(&self) -> std::process::ExitCode {
        let failed = self.failures();
        println!(
            "acceptance: {} passed, {} failed{}",
            self.results.len() - failed.len(),
            failed.len(),
            if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
        );
        if failed.is_empty() {
            std::process::ExitCode::SUCCESS
        } else {
            std::process::ExitCode::FAILURE
        }
    }
}

/// Runs `f` and returns its value with the elapsed wall time.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

/// Largest `|a - b| / max(|a|, |b|)` over paired values, zero when both are 0.
pub fn max_relative_diff(pairs: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    pairs
        .into_iter()
        .map(|(a, b)| {
            let scale = a.abs().max(b.abs());
            if scale == 0.0 {
                0.0
            } else {
                (a - b).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}
