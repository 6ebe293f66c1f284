use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn is_pass(self) -> bool {
        self == Verdict::Pass
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        })
    }
}

/// Outcome of a numerical check.
///
/// `verdict` is `Pass` exactly when `max_violation <= tolerance`. Violations
/// are stored in the units the check documents (usually relative to a
/// problem scale).
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub name: String,
    pub verdict: Verdict,
    pub max_violation: f64,
    /// `(t, x)` of the worst violation, when one exists.
    pub location: Option<(f64, f64)>,
    pub tolerance: f64,
    pub context: String,
    pub points_checked: usize,
    pub points_failed: usize,
}

impl Report {
    pub fn new(name: impl Into<String>, max_violation: f64, tolerance: f64) -> Self {
        let verdict = if max_violation <= tolerance {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        Self {
            name: name.into(),
            verdict,
            max_violation,
            location: None,
            tolerance,
            context: String::new(),
            points_checked: 0,
            points_failed: 0,
        }
    }

    pub fn at(mut self, t: f64, x: f64) -> Self {
        self.location = Some((t, x));
        self
    }

    pub fn with_context(mut self, context: impl Into<String>) -> Self {
        self.context = context.into();
        self
    }

    pub fn with_counts(mut self, checked: usize, failed: usize) -> Self {
        self.points_checked = checked;
        self.points_failed = failed;
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict.is_pass()
    }

    /// Share of checked points that satisfied the inequality.
    pub fn pass_fraction(&self) -> f64 {
        if self.points_checked == 0 {
            1.0
        } else {
            1.0 - self.points_failed as f64 / self.points_checked as f64
        }
    }
}

/// `CHECK <name> verdict=<pass|fail> max_violation=<e> at=(t,x) tol=<e>`
impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "CHECK {} verdict={} max_violation={:e} ",
            self.name, self.verdict, self.max_violation
        )?;
        match self.location {
            Some((t, x)) => write!(f, "at=({t:e},{x:e})")?,
            None => f.write_str("at=none")?,
        }
        write!(f, " tol={:e}", self.tolerance)
    }
}
