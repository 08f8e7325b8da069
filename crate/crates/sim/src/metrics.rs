//! Run reports: attack metrics, availability, flags, trust history, and
//! the post-run acceptance checks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use trustfabric_core::audit::Detector;
use trustfabric_core::Tick;

use crate::scenario::ChecksSpec;

/// Per-attack outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub index: usize,
    pub attacker: String,
    pub target: String,
    /// Terminal phase code: `complete`, `detected`, or the live phase the
    /// run ended in.
    pub final_phase: String,
    pub executed_at: Option<Tick>,
    /// Session boundaries the payload survived in the target's long-term
    /// memory.
    pub persistence_depth: u64,
    pub flagged: bool,
    /// Victim composite-trust drop across the execution tick.
    pub trust_impact: f64,
    /// Ordered phase trace, e.g. `["q0->q1@3", ...]`.
    pub transitions: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlagReport {
    pub detector: Detector,
    pub tick: Tick,
    pub actors: Vec<String>,
    pub reason: String,
    pub severity: f64,
    pub record_indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityReport {
    pub legitimate_requests: u64,
    pub legitimate_successes: u64,
    pub fraction: f64,
}

/// One trust-engine step, exportable for plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustPoint {
    pub tick: Tick,
    pub agent: String,
    pub behavioral: f64,
    pub reputation: f64,
    pub historical: f64,
    pub compliance: f64,
    pub composite: f64,
}

/// The full deterministic run report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub ticks: Tick,
    pub success_rate: f64,
    pub persistence_depth: u64,
    pub trigger_evasion_rate: f64,
    pub trust_impact: f64,
    pub attacks: Vec<AttackReport>,
    pub flags: Vec<FlagReport>,
    pub availability: AvailabilityReport,
    pub enforcement_events: u64,
    pub jit_environments: u64,
    pub quarantined_entries: u64,
    pub final_trust: BTreeMap<String, f64>,
    pub trust_history: Vec<TrustPoint>,
    pub trace: Vec<String>,
}

impl RunReport {
    /// Deterministic pretty JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Tabular (CSV) trust-history export for plotting.
    pub fn trust_history_csv(&self) -> String {
        let mut out = String::from("tick,agent,behavioral,reputation,historical,compliance,composite\n");
        for p in &self.trust_history {
            out.push_str(&format!(
                "{},{},{:.9},{:.9},{:.9},{:.9},{:.9}\n",
                p.tick, p.agent, p.behavioral, p.reputation, p.historical, p.compliance, p.composite
            ));
        }
        out
    }
}

/// Service availability against a threshold (`fraction >= alpha`).
pub fn availability_monitor(report: &RunReport, alpha: f64) -> (f64, bool) {
    let fraction = report.availability.fraction;
    (fraction, fraction >= alpha)
}

/// One evaluated scenario check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Evaluate the scenario's embedded acceptance checks against the report.
pub fn evaluate_checks(report: &RunReport, checks: &ChecksSpec) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    if let Some(max) = checks.max_persistence_depth {
        out.push(CheckOutcome {
            name: "max_persistence_depth".into(),
            passed: report.persistence_depth <= max,
            detail: format!("{} <= {max}", report.persistence_depth),
        });
    }
    if let Some(max) = checks.max_evasion_rate {
        out.push(CheckOutcome {
            name: "max_evasion_rate".into(),
            passed: report.trigger_evasion_rate <= max,
            detail: format!("{:.4} <= {max}", report.trigger_evasion_rate),
        });
    }
    if let Some(max) = checks.max_trust_impact {
        out.push(CheckOutcome {
            name: "max_trust_impact".into(),
            passed: report.trust_impact <= max,
            detail: format!("{:.4} <= {max}", report.trust_impact),
        });
    }
    if let Some(min) = checks.min_availability {
        out.push(CheckOutcome {
            name: "min_availability".into(),
            passed: report.availability.fraction >= min,
            detail: format!("{:.4} >= {min}", report.availability.fraction),
        });
    }
    if let Some(max) = checks.max_success_rate {
        out.push(CheckOutcome {
            name: "max_success_rate".into(),
            passed: report.success_rate <= max,
            detail: format!("{:.4} <= {max}", report.success_rate),
        });
    }
    if let Some(required) = checks.require_data_flow_flag {
        let has = report.flags.iter().any(|f| f.detector == Detector::UnauthorizedDataFlow);
        out.push(CheckOutcome {
            name: "require_data_flow_flag".into(),
            passed: has == required,
            detail: format!("data-flow flag present: {has}, required: {required}"),
        });
    }
    out
}
