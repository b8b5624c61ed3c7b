//! Experiment orchestration: run cells, sweeps and the theory checks.

pub mod cells;
pub mod checks;
pub mod config;
pub mod rundir;
pub mod sweeps;

use serde::{Deserialize, Serialize};
use statrs::statistics::Statistics;

pub use cells::{run_cell, CellCache, CellOutput, CellResult};
pub use config::{CheckConfig, LabConfig, SweepGrids};
pub use rundir::{RunDir, Summary};
pub use sweeps::{sweep, SweepKind, SweepReport};

/// Outcome of one verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    /// Target missed but the documented fallback condition holds.
    WeakPass,
    Fail,
    /// Preconditions unmet; nothing was asserted.
    Refused,
    /// Too few seeds for an ordering verdict; means only.
    Suppressed,
}

impl CheckStatus {
    /// Whether the status lets a run exit successfully.
    pub fn ok(self) -> bool {
        matches!(self, CheckStatus::Pass | CheckStatus::WeakPass | CheckStatus::Suppressed)
    }

    pub fn label(self) -> &'static str {
        match self {
            CheckStatus::Pass => "PASS",
            CheckStatus::WeakPass => "WEAK-PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Refused => "REFUSED",
            CheckStatus::Suppressed => "SUPPRESSED",
        }
    }

    pub fn from_bool(pass: bool) -> Self {
        if pass {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckLine {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

impl CheckLine {
    pub fn new(name: impl Into<String>, status: CheckStatus, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status,
            detail: detail.into(),
        }
    }
}

impl std::fmt::Display for CheckLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", self.status.label(), self.name, self.detail)
    }
}

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Stats {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = if n == 0 { f64::NAN } else { xs.iter().mean() };
        let sd = if n < 2 { 0.0 } else { xs.iter().std_dev() };
        Self { mean, sd, n }
    }

    /// `self` above `other` with non-overlapping one-sd intervals.
    pub fn clearly_above(&self, other: &Stats) -> bool {
        self.mean - self.sd > other.mean + other.sd
    }
}

impl std::fmt::Display for Stats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3}±{:.3}", self.mean, self.sd)
    }
}
