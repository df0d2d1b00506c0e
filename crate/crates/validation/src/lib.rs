//! Acceptance criteria for `critmat`, each checked at its stated size and
//! tolerance, plus the invariant properties shared with the unit tests.
//!
//! Every criterion returns an [`Outcome`] instead of panicking so that a
//! runner can report all ten even when some fail.

pub mod criteria;
pub mod properties;

use std::fmt;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: u8,
    pub title: &'static str,
    pub pass: bool,
    /// Measured values next to their bounds.
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "criterion {:>2} [{verdict}] {}: {} ({:.1} s)", self.id, self.title, self.detail, self.seconds)
    }
}

/// Runs `check` and times it. An `Err` from the library counts as a failure.
pub fn evaluate(id: u8, title: &'static str, check: impl FnOnce() -> critmat::Result<(bool, String)>) -> Outcome {
    let clock = Instant::now();
    let (pass, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
    Outcome { id, title, pass, detail, seconds: clock.elapsed().as_secs_f64() }
}

/// |value / target − 1| ≤ tol.
pub fn within(value: f64, target: f64, tol: f64) -> bool {
    (value / target - 1.0).abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_fail_the_criterion() {
        let o = evaluate(1, "x", || Err(critmat::Error::InvalidParameter("boom".into())));
        assert!(!o.pass);
        assert!(o.detail.contains("boom"));
        assert!(o.to_string().starts_with("criterion  1 [FAIL] x: error:"));
    }

    #[test]
    fn relative_band() {
        assert!(within(1.19, 1.0, 0.2));
        assert!(!within(0.79, 1.0, 0.2));
        assert!(!within(f64::NAN, 1.0, 0.2));
    }
}
