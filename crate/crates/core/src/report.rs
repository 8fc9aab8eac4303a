//! Unified result record shared by every scheme.

use serde::{Deserialize, Serialize};

use crate::model::{Allocation, Constraint, EnergyTimeBreakdown};

/// Outcome of one solve, whatever the scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub scheme: String,
    /// Completion-time budget the solve ran under, s.
    pub deadline: Option<f64>,
    /// Minimum achievable completion time for this scheme, s.
    pub completion_time_min: Option<f64>,
    /// Objective after every outer iteration, starting at the initial point.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub allocation: Option<Allocation>,
    pub breakdown: Option<EnergyTimeBreakdown>,
    /// Constraints the final allocation violates (empty when feasible).
    pub violations: Vec<Constraint>,
    pub notes: Vec<String>,
}

impl SolveReport {
    pub fn new(scheme: impl Into<String>) -> Self {
        SolveReport {
            scheme: scheme.into(),
            deadline: None,
            completion_time_min: None,
            objective_trace: Vec::new(),
            iterations: 0,
            converged: false,
            allocation: None,
            breakdown: None,
            violations: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn total_energy(&self) -> Option<f64> {
        self.breakdown.as_ref().map(|b| b.total_energy)
    }

    pub fn completion_time(&self) -> Option<f64> {
        self.breakdown.as_ref().map(|b| b.completion_time())
    }
}
