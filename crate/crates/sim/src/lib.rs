//! # trustfabric-sim
//!
//! Deterministic discrete-event simulation harness for the trust fabric:
//! scenario loading, the tick loop that drives agents, attacks and
//! defenses, Monte Carlo experiments for the layered-defense bound, and
//! mutation-based attack fuzzing.
//!
//! Everything is reproducible: a scenario plus a seed yields bit-identical
//! reports and audit exports.

pub mod fuzz;
pub mod metrics;
pub mod montecarlo;
pub mod scenario;
pub mod world;

pub use fuzz::{fuzz, FuzzOutcome, MutationConfig, MutationOp};
pub use metrics::{availability_monitor, evaluate_checks, CheckOutcome, RunReport};
pub use montecarlo::{monte_carlo, defense_grid, MonteCarloOutcome};
pub use scenario::{Scenario, ScenarioError};
pub use world::{run, RunOutcome};

/// Scenarios shipped with the simulator, addressable by name from the CLI.
pub fn builtin_scenarios() -> &'static [(&'static str, &'static str)] {
    &[
        ("meeting_attack", include_str!("../scenarios/meeting_attack.json")),
        (
            "meeting_attack_audited",
            include_str!("../scenarios/meeting_attack_audited.json"),
        ),
        (
            "meeting_attack_full_defense",
            include_str!("../scenarios/meeting_attack_full_defense.json"),
        ),
        ("benign_baseline", include_str!("../scenarios/benign_baseline.json")),
        ("jit_containment", include_str!("../scenarios/jit_containment.json")),
        ("resource_exhaustion", include_str!("../scenarios/resource_exhaustion.json")),
        (
            "resource_exhaustion_tare",
            include_str!("../scenarios/resource_exhaustion_tare.json"),
        ),
    ]
}

/// Look a built-in scenario up by name.
pub fn builtin_scenario(name: &str) -> Option<Scenario> {
    builtin_scenarios()
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| Scenario::from_json(text).expect("shipped scenarios are valid"))
}
