use serde::{Deserialize, Serialize};

/// One line of a machine-readable check report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub max_defect: f64,
    pub samples: usize,
    pub seed: u64,
    pub pass: bool,
}

impl CheckReport {
    /// Passes when the defect is finite and at most `tol`.
    pub fn new(check: impl Into<String>, max_defect: f64, tol: f64, samples: usize, seed: u64) -> Self {
        CheckReport { check: check.into(), max_defect, samples, seed, pass: max_defect.is_finite() && max_defect <= tol }
    }

    /// A check whose verdict is a boolean rather than a thresholded defect.
    pub fn verdict(check: impl Into<String>, max_defect: f64, pass: bool, samples: usize, seed: u64) -> Self {
        CheckReport { check: check.into(), max_defect, samples, seed, pass }
    }
}
