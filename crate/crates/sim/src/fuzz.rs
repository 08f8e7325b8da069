//! Mutation-based attack fuzzing: generate payload variants from a base
//! scenario, run each, and rank by outcome severity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use trustfabric_core::lpci::PayloadEncoding;
use trustfabric_core::rng::DetRng;

use crate::scenario::{AgentRole, AgentSpec, Scenario, ScenarioError, ScheduledEvent, TriggerDto};
use crate::world::run;

#[derive(Debug, Error)]
pub enum FuzzError {
    #[error("fuzz budget must be at least 1")]
    ZeroBudget,
    #[error("scenario has no attacks to mutate")]
    NoAttacks,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Payload mutation operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationOp {
    EncodeBase64,
    WhitespaceStego,
    /// Embedding-space perturbation of the trigger phrase.
    SynonymSwap,
    TriggerDelayJitter,
    PayloadSplitAcrossAgents,
}

pub const ALL_OPERATORS: [MutationOp; 5] = [
    MutationOp::EncodeBase64,
    MutationOp::WhitespaceStego,
    MutationOp::SynonymSwap,
    MutationOp::TriggerDelayJitter,
    MutationOp::PayloadSplitAcrossAgents,
];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MutationConfig {
    pub operators: Vec<MutationOp>,
    /// Per-operator application probability for each mutant.
    pub probability: f64,
}

impl Default for MutationConfig {
    fn default() -> Self {
        Self { operators: ALL_OPERATORS.to_vec(), probability: 0.5 }
    }
}

/// One ranked fuzzing result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuzzOutcome {
    pub mutant: u64,
    pub operators: Vec<MutationOp>,
    pub succeeded: bool,
    pub evasion_rate: f64,
    pub persistence_depth: u64,
}

/// Apply the chosen operators to a clone of the base scenario.
pub fn mutate(scenario: &Scenario, operators: &[MutationOp], mutant: u64) -> Scenario {
    let mut s = scenario.clone();
    s.name = format!("{}-mutant{mutant}", s.name);
    for op in operators {
        match op {
            MutationOp::EncodeBase64 => {
                for attack in &mut s.attacks {
                    attack.encoding = PayloadEncoding::Base64;
                }
            }
            MutationOp::WhitespaceStego => {
                for attack in &mut s.attacks {
                    attack.encoding = PayloadEncoding::WhitespaceStego;
                }
            }
            MutationOp::SynonymSwap => {
                for attack in &mut s.attacks {
                    if let TriggerDto::PhraseMatch { phrase, .. } = &mut attack.trigger {
                        // Perturb the phrase (and thus its hashed embedding)
                        // while keeping most token mass.
                        phrase.push_str(&format!(" variant{mutant}"));
                    }
                }
            }
            MutationOp::TriggerDelayJitter => {
                for attack in &mut s.attacks {
                    if let TriggerDto::TimeDelayed { delay } = &mut attack.trigger {
                        *delay = delay.saturating_add(mutant % 3).max(1);
                    }
                }
            }
            MutationOp::PayloadSplitAcrossAgents => {
                split_across_agents(&mut s);
            }
        }
    }
    s
}

/// Split the first attack's payload across a second attacker, relaying the
/// fragments over inter-agent messages (the coordination pattern no single
/// agent reveals).
fn split_across_agents(s: &mut Scenario) {
    let Some(base) = s.attacks.first().cloned() else { return };
    let accomplice_name = format!("{}_b", base.attacker);
    if !s.agents.iter().any(|a| a.name == accomplice_name) {
        let attacker_spec = s
            .agents
            .iter()
            .find(|a| a.name == base.attacker)
            .cloned()
            .unwrap_or(AgentSpec {
                name: base.attacker.clone(),
                role: AgentRole::Attacker,
                capabilities: vec![],
                initial_trust: 0.5,
                clearance_level: 0,
                authorized_hours: None,
                register_name: None,
            });
        s.agents.push(AgentSpec {
            name: accomplice_name.clone(),
            register_name: None,
            ..attacker_spec
        });
    }

    let text = base.payload_text.clone();
    let mid = text.len() / 2;
    let (first, second) = text.split_at(mid.max(1));
    let mut split_attack = base.clone();
    split_attack.attacker = accomplice_name.clone();
    split_attack.payload_text = second.to_string();
    split_attack.start_tick = base.start_tick + 1;
    split_attack.channel = trustfabric_core::lpci::InjectionChannel::InterAgentMessage;
    s.attacks[0].payload_text = first.to_string();
    s.attacks.push(split_attack);

    // The accomplices relay fragments back and forth; the repeated
    // high-strength cross edges are what coordination detection keys on.
    let t0 = base.start_tick;
    for i in 0..4u64 {
        let (from, to) = if i % 2 == 0 {
            (base.attacker.clone(), accomplice_name.clone())
        } else {
            (accomplice_name.clone(), base.attacker.clone())
        };
        s.schedule.push(ScheduledEvent::Message {
            tick: t0 + i * 2,
            from,
            to,
            content: format!("fragment sync {text}"),
        });
    }
}

/// Generate `budget` mutants, run each, and rank by
/// (succeeded, evasion, persistence) descending.
pub fn fuzz(
    scenario: &Scenario,
    config: &MutationConfig,
    budget: u64,
) -> Result<Vec<FuzzOutcome>, FuzzError> {
    if budget == 0 {
        return Err(FuzzError::ZeroBudget);
    }
    if scenario.attacks.is_empty() {
        return Err(FuzzError::NoAttacks);
    }
    let mut outcomes = Vec::with_capacity(budget as usize);
    for mutant in 0..budget {
        let mut rng = DetRng::for_site(scenario.seed, "fuzz-ops", mutant);
        let operators: Vec<MutationOp> = config
            .operators
            .iter()
            .copied()
            .filter(|_| rng.chance(config.probability))
            .collect();
        let mutated = mutate(scenario, &operators, mutant);
        let outcome = run(&mutated, Some(scenario.seed.wrapping_add(mutant)))?;
        outcomes.push(FuzzOutcome {
            mutant,
            operators,
            succeeded: outcome.report.success_rate > 0.0,
            evasion_rate: outcome.report.trigger_evasion_rate,
            persistence_depth: outcome.report.persistence_depth,
        });
    }
    outcomes.sort_by(|a, b| {
        b.succeeded
            .cmp(&a.succeeded)
            .then(b.evasion_rate.partial_cmp(&a.evasion_rate).expect("finite"))
            .then(b.persistence_depth.cmp(&a.persistence_depth))
            .then(a.mutant.cmp(&b.mutant))
    });
    Ok(outcomes)
}
