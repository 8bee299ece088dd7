//! Structured verification reports: one assertion per line.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct Assertion {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    /// `"<="`, `">="` or `"=="`.
    pub relation: &'static str,
    pub pass: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub assertions: Vec<Assertion>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    /// Asserts `value ≤ bound`; NaN fails.
    pub fn at_most(&mut self, name: impl Into<String>, value: f64, bound: f64) -> bool {
        self.push(name.into(), value, bound, "<=", value <= bound)
    }

    /// Asserts `value ≥ bound`; NaN fails.
    pub fn at_least(&mut self, name: impl Into<String>, value: f64, bound: f64) -> bool {
        self.push(name.into(), value, bound, ">=", value >= bound)
    }

    pub fn holds(&mut self, name: impl Into<String>, ok: bool) -> bool {
        self.push(name.into(), if ok { 1.0 } else { 0.0 }, 1.0, "==", ok)
    }

    fn push(&mut self, name: String, value: f64, bound: f64, relation: &'static str, pass: bool) -> bool {
        self.assertions.push(Assertion {
            name,
            value,
            bound,
            relation,
            pass,
        });
        pass
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    pub fn note(&mut self, msg: impl Into<String>) {
        self.notes.push(msg.into());
    }

    pub fn merge(&mut self, other: Report) {
        self.assertions.extend(other.assertions);
        self.warnings.extend(other.warnings);
        self.notes.extend(other.notes);
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }

    pub fn failures(&self) -> usize {
        self.assertions.iter().filter(|a| !a.pass).count()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.assertions {
            writeln!(
                f,
                "{} value={:.6e} {} bound={:.6e} {}",
                a.name,
                a.value,
                a.relation,
                a.bound,
                if a.pass { "PASS" } else { "FAIL" }
            )?;
        }
        for n in &self.notes {
            writeln!(f, "note: {n}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nan_fails() {
        let mut r = Report::new();
        assert!(!r.at_most("x", f64::NAN, 1.0));
        assert!(r.at_least("y", 2.0, 1.0));
        assert_eq!(r.failures(), 1);
        let text = r.to_string();
        assert!(text.contains("x value=NaN <= bound=1.000000e0 FAIL"));
        assert!(text.contains("y value=2.000000e0 >= bound=1.000000e0 PASS"));
    }
}
