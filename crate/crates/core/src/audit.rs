use serde::Serialize;

/// One audited quantity: a normalized supremum tracked over a sequence of
/// refinements (grid refinements or mesh sizes).
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AuditCheck {
    pub name: String,
    /// Refinement labels, e.g. mesh sizes `n` or `"base"` / `"refined"`.
    pub labels: Vec<String>,
    pub values: Vec<f64>,
    pub pass: bool,
    pub note: String,
}

impl AuditCheck {
    /// Bounded-sequence rule: every value finite and the maximum at most
    /// `factor` times the first value.
    pub fn bounded(name: &str, labels: Vec<String>, values: Vec<f64>, factor: f64) -> Self {
        Self::bounded_with_floor(name, labels, values, factor, 0.0)
    }

    /// As [`AuditCheck::bounded`], but values at or below `floor` count as
    /// zero (roundoff on quantities that vanish identically).
    pub fn bounded_with_floor(name: &str, labels: Vec<String>, values: Vec<f64>, factor: f64, floor: f64) -> Self {
        let finite = values.iter().all(|v| v.is_finite());
        let first = values.first().copied().unwrap_or(f64::NAN);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pass = finite && (max <= factor * first.abs() + f64::MIN_POSITIVE || max <= floor);
        let note = if !finite {
            "non-finite value".to_string()
        } else {
            format!("max/first = {:.4}", max / first.abs())
        };
        AuditCheck {
            name: name.to_string(),
            labels,
            values,
            pass,
            note,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AuditReport {
    pub subject: String,
    pub checks: Vec<AuditCheck>,
    pub pass: bool,
}

impl AuditReport {
    pub fn new(subject: impl Into<String>, checks: Vec<AuditCheck>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        AuditReport {
            subject: subject.into(),
            checks,
            pass,
        }
    }

    pub fn check(&self, name: &str) -> Option<&AuditCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}
