//! The JSON report written to `report.json`.

use std::collections::BTreeMap;

use dcf_core::coupled::{CoupledReport, HypothesisReport, Verdict};
use dcf_core::grid::Norms;
use dcf_core::momentum::{KernelReport, LameTrace};
use dcf_core::physical::TermComparison;
use dcf_core::scalar::MonotoneTrace;
use dcf_core::stability::EigenSummary;
use serde::Serialize;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Success,
    HypothesisFail,
    SolverFailure,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Success => 0,
            RunStatus::HypothesisFail => 2,
            RunStatus::SolverFailure => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhysicalSection {
    pub discrepancies: Vec<String>,
    pub h_override: bool,
    /// `sup |u^{2-q}(h_phys - h_used)| / c_n`: the part of the Hamiltonian
    /// residual introduced by replacing `h`.
    pub h_override_term: f64,
    pub hamiltonian_residual: f64,
    pub momentum_residual: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub q_coefficients: Vec<f64>,
    pub term_comparison: Vec<TermComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifySection {
    pub bubble_residual: f64,
    pub bubble_residual_refined: f64,
    pub bubble_improvement: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manufactured_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manufactured_excess: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub version: &'static str,
    pub mode: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub status: RunStatus,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub verdicts: Vec<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hypotheses: Option<HypothesisReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monotone: Option<MonotoneTrace>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupled: Option<CoupledReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lame: Option<LameTrace>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigen: Option<EigenSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub physical: Option<PhysicalSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
    pub norms: BTreeMap<String, Norms>,
    pub dumps: Vec<String>,
    pub wall_time_seconds: f64,
}

impl SolveReport {
    pub fn new(mode: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            version: VERSION,
            mode: mode.to_string(),
            seed,
            config,
            status: RunStatus::Success,
            exit_code: 0,
            error: None,
            verdicts: Vec::new(),
            hypotheses: None,
            monotone: None,
            coupled: None,
            lame: None,
            kernel: None,
            eigen: None,
            physical: None,
            verify: None,
            norms: BTreeMap::new(),
            dumps: Vec::new(),
            wall_time_seconds: 0.0,
        }
    }

    pub fn set_status(&mut self, status: RunStatus) {
        self.status = status;
        self.exit_code = status.exit_code();
    }
}
