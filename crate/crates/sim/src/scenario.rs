//! Scenario files: the JSON schema, loading and validation.
//!
//! Everything a run needs lives in one file: the seed, agents, registries,
//! policy text, defense layers, attacks, the event schedule and session
//! windows. Unknown keys are rejected and every invariant is checked at
//! load, so `run` never fails at tick time.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use trustfabric_core::lpci::{
    DamageKind, InjectionChannel, LpciPayload, PayloadEncoding, TriggerKind, TriggerSpec,
};
use trustfabric_core::trust::TrustWeights;
use trustfabric_core::Tick;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("scenario invalid: {0}")]
    Invalid(String),
    #[error("io error reading scenario: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Victim,
    Attacker,
    Service,
    Guardian,
    User,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub name: String,
    pub role: AgentRole,
    #[serde(default)]
    pub capabilities: Vec<String>,
    pub initial_trust: f64,
    #[serde(default)]
    pub clearance_level: i64,
    #[serde(default)]
    pub authorized_hours: Option<(Tick, Tick)>,
    /// ANS name to register at startup, e.g.
    /// `a2a://scheduler.Calendar.AcmeCorp.v1.soc2`.
    #[serde(default)]
    pub register_name: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistrySpec {
    pub node_id: String,
    #[serde(default)]
    pub peers: Vec<String>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub enabled: bool,
    /// Detection probability for the layered-defense experiments.
    #[serde(default)]
    pub detection: f64,
    /// Marker recording the independence assumption the bound relies on.
    #[serde(default = "default_true")]
    pub independent: bool,
}

fn default_true() -> bool {
    true
}

impl Default for LayerSpec {
    fn default() -> Self {
        Self { enabled: false, detection: 0.0, independent: true }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefensesSpec {
    pub input_filter: LayerSpec,
    pub causal_audit: LayerSpec,
    pub tare: LayerSpec,
    pub attestation: LayerSpec,
    pub jit: LayerSpec,
    /// Trust penalty per unit flag severity applied by audit rescoring.
    pub rescore_base: f64,
}

impl Default for DefensesSpec {
    fn default() -> Self {
        Self {
            input_filter: LayerSpec::default(),
            causal_audit: LayerSpec::default(),
            tare: LayerSpec::default(),
            attestation: LayerSpec::default(),
            jit: LayerSpec::default(),
            rescore_base: 0.05,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum TriggerDto {
    TimeDelayed { delay: Tick },
    PhraseMatch { phrase: String, threshold: f64 },
    ContextEvent { label: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DamageDto {
    pub kind: DamageKind,
    pub magnitude: f64,
    #[serde(default)]
    pub tool_call: Option<String>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseProbsDto {
    pub inject: f64,
    pub persist: f64,
    pub trigger: f64,
    pub execute: f64,
    pub evade: f64,
}

impl Default for PhaseProbsDto {
    fn default() -> Self {
        Self { inject: 1.0, persist: 1.0, trigger: 1.0, execute: 1.0, evade: 1.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub attacker: String,
    pub target: String,
    pub start_tick: Tick,
    /// Cleartext instruction; the encoding is applied at load.
    pub payload_text: String,
    #[serde(default = "default_encoding")]
    pub encoding: PayloadEncoding,
    pub trigger: TriggerDto,
    #[serde(default = "default_stealth")]
    pub stealth: f64,
    pub damage: DamageDto,
    #[serde(default = "default_channel")]
    pub channel: InjectionChannel,
    #[serde(default = "default_disguise")]
    pub disguise_label: String,
    #[serde(default)]
    pub one_shot: bool,
    #[serde(default)]
    pub phase_probs: PhaseProbsDto,
}

fn default_encoding() -> PayloadEncoding {
    PayloadEncoding::Base64
}

fn default_stealth() -> f64 {
    1.0
}

fn default_channel() -> InjectionChannel {
    InjectionChannel::RetrievedDocument
}

fn default_disguise() -> String {
    "internal priority directive".to_string()
}

impl AttackSpec {
    /// Build the runtime payload, applying the declared encoding to the
    /// cleartext.
    pub fn payload(&self) -> LpciPayload {
        use base64::engine::general_purpose::STANDARD as BASE64;
        use base64::Engine;
        let payload_text = match self.encoding {
            PayloadEncoding::None => self.payload_text.clone(),
            PayloadEncoding::Base64 => BASE64.encode(self.payload_text.as_bytes()),
            PayloadEncoding::WhitespaceStego => {
                trustfabric_core::lpci::whitespace_encode(&self.disguise_label, &self.payload_text)
            }
        };
        let kind = match &self.trigger {
            TriggerDto::TimeDelayed { delay } => TriggerKind::TimeDelayed { delay: *delay },
            TriggerDto::PhraseMatch { phrase, threshold } => {
                TriggerKind::PhraseMatch { phrase: phrase.clone(), threshold: *threshold }
            }
            TriggerDto::ContextEvent { label } => TriggerKind::ContextEvent { label: label.clone() },
        };
        LpciPayload {
            payload_text,
            encoding: self.encoding,
            trigger: TriggerSpec { kind, one_shot: self.one_shot },
            stealth: self.stealth,
            damage: trustfabric_core::lpci::DamageProfile {
                kind: self.damage.kind,
                magnitude: self.damage.magnitude,
                tool_call: self.damage.tool_call.clone(),
            },
            channel: self.channel,
            disguise_label: self.disguise_label.clone(),
        }
    }
}

/// One scheduled simulation event.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "type")]
pub enum ScheduledEvent {
    /// A benign agent action compared against expected behavior.
    Action { tick: Tick, agent: String, action: String, expected: String },
    /// A user query arriving at an agent; drives memory retrieval.
    Phrase { tick: Tick, to: String, text: String },
    /// An environment event label becomes present for this tick.
    Context { tick: Tick, label: String },
    /// A legitimate service request, counted for availability.
    ServiceRequest { tick: Tick, agent: String, capability: String },
    /// A signed peer reputation report.
    Report { tick: Tick, reporter: String, subject: String, score: f64 },
    /// Pairwise registry synchronization.
    Sync { tick: Tick, from: String, to: String },
    /// Run a task inside an ephemeral just-in-time environment.
    JitTask { tick: Tick, agent: String, task: String },
    /// A direct inter-agent message carrying content (data-chains in the
    /// audit graph).
    Message { tick: Tick, from: String, to: String, content: String },
    /// Second-factor confirmation for an agent, discharging 2FA
    /// obligations on its requests this tick.
    TwoFactor { tick: Tick, agent: String },
}

impl ScheduledEvent {
    pub fn tick(&self) -> Tick {
        match self {
            ScheduledEvent::Action { tick, .. }
            | ScheduledEvent::Phrase { tick, .. }
            | ScheduledEvent::Context { tick, .. }
            | ScheduledEvent::ServiceRequest { tick, .. }
            | ScheduledEvent::Report { tick, .. }
            | ScheduledEvent::Sync { tick, .. }
            | ScheduledEvent::JitTask { tick, .. }
            | ScheduledEvent::Message { tick, .. }
            | ScheduledEvent::TwoFactor { tick, .. } => *tick,
        }
    }

    pub fn agent_refs(&self) -> Vec<&str> {
        match self {
            ScheduledEvent::Action { agent, .. } => vec![agent],
            ScheduledEvent::Phrase { to, .. } => vec![to],
            ScheduledEvent::Context { .. } => vec![],
            ScheduledEvent::ServiceRequest { agent, .. } => vec![agent],
            ScheduledEvent::Report { reporter, subject, .. } => vec![reporter, subject],
            ScheduledEvent::Sync { .. } => vec![],
            ScheduledEvent::JitTask { agent, .. } => vec![agent],
            ScheduledEvent::Message { from, to, .. } => vec![from, to],
            ScheduledEvent::TwoFactor { agent, .. } => vec![agent],
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrustSpec {
    pub weights: (f64, f64, f64, f64),
    pub decay_lambda: f64,
    pub window: usize,
    pub bootstrap: f64,
    pub reputation_half_life: Tick,
}

impl Default for TrustSpec {
    fn default() -> Self {
        Self {
            weights: (0.4, 0.2, 0.2, 0.2),
            decay_lambda: 0.01,
            window: 20,
            bootstrap: 0.5,
            reputation_half_life: 50,
        }
    }
}

impl TrustSpec {
    pub fn weights(&self) -> Result<TrustWeights, ScenarioError> {
        let (a, b, g, d) = self.weights;
        TrustWeights::new(a, b, g, d).map_err(|e| invalid(e.to_string()))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TareSpec {
    pub hysteresis: f64,
    pub jit_trust_floor: f64,
    pub jit_credential_ttl: Tick,
    /// Custom containment step table; the default ships as
    /// `scenarios/tare_default.json`.
    #[serde(default)]
    pub containment: Option<trustfabric_core::tare::ContainmentPolicy>,
}

impl Default for TareSpec {
    fn default() -> Self {
        Self { hysteresis: 0.05, jit_trust_floor: 0.3, jit_credential_ttl: 16, containment: None }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    /// Shared service capacity (requests satisfiable per tick).
    pub capacity_per_tick: u32,
}

impl Default for ServiceSpec {
    fn default() -> Self {
        Self { capacity_per_tick: 4 }
    }
}

/// Pass/fail thresholds evaluated after a run; any failure makes the CLI
/// exit nonzero.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksSpec {
    pub max_persistence_depth: Option<u64>,
    pub max_evasion_rate: Option<f64>,
    pub max_trust_impact: Option<f64>,
    pub min_availability: Option<f64>,
    pub max_success_rate: Option<f64>,
    pub require_data_flow_flag: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_day_length")]
    pub day_length: Tick,
    /// Simulated duration; defaults to one past the last session end.
    #[serde(default)]
    pub ticks: Option<Tick>,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub registries: Vec<RegistrySpec>,
    #[serde(default)]
    pub policies: String,
    #[serde(default)]
    pub defenses: DefensesSpec,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub schedule: Vec<ScheduledEvent>,
    /// Inclusive session windows, ordered and non-overlapping.
    pub sessions: Vec<(Tick, Tick)>,
    #[serde(default)]
    pub trust: TrustSpec,
    #[serde(default)]
    pub tare: TareSpec,
    #[serde(default)]
    pub service: ServiceSpec,
    /// Declared adversary capability envelope; attacks must use permitted
    /// channels. Absent means unconstrained.
    #[serde(default)]
    pub adversary: Option<trustfabric_core::lpci::AdversaryModel>,
    /// Default mutation settings for fuzzing this scenario's attacks.
    #[serde(default)]
    pub mutations: Option<MutationSettings>,
    #[serde(default)]
    pub checks: Option<ChecksSpec>,
}

/// Scenario-embedded fuzzing defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutationSettings {
    pub operators: Vec<crate::fuzz::MutationOp>,
    pub probability: f64,
}

fn default_day_length() -> Tick {
    24
}

fn default_dim() -> usize {
    trustfabric_core::embedding::DEFAULT_DIM
}

impl Scenario {
    /// Parse and validate scenario JSON.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Load a scenario from disk.
    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn total_ticks(&self) -> Tick {
        self.ticks
            .unwrap_or_else(|| self.sessions.last().map(|(_, end)| end + 1).unwrap_or(1))
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.day_length == 0 {
            return Err(invalid("day_length must be positive"));
        }
        if self.embedding_dim == 0 {
            return Err(invalid("embedding_dim must be positive"));
        }
        if self.agents.is_empty() {
            return Err(invalid("at least one agent is required"));
        }
        let mut names = BTreeSet::new();
        for agent in &self.agents {
            if !names.insert(agent.name.as_str()) {
                return Err(invalid(format!("duplicate agent name `{}`", agent.name)));
            }
            if !(0.0..=1.0).contains(&agent.initial_trust) {
                return Err(invalid(format!(
                    "agent `{}` initial_trust {} outside [0,1]",
                    agent.name, agent.initial_trust
                )));
            }
            if let Some(text) = &agent.register_name {
                trustfabric_core::ans::AnsName::parse(text)
                    .map_err(|e| invalid(format!("agent `{}` register_name: {e}", agent.name)))?;
            }
        }

        if self.sessions.is_empty() {
            return Err(invalid("at least one session window is required"));
        }
        for (start, end) in &self.sessions {
            if start > end {
                return Err(invalid(format!("session ({start}, {end}) is empty")));
            }
        }
        for pair in self.sessions.windows(2) {
            if pair[1].0 <= pair[0].1 {
                return Err(invalid(format!(
                    "sessions ({}, {}) and ({}, {}) overlap or are out of order",
                    pair[0].0, pair[0].1, pair[1].0, pair[1].1
                )));
            }
        }

        let mut registry_ids = BTreeSet::new();
        for registry in &self.registries {
            if !registry_ids.insert(registry.node_id.as_str()) {
                return Err(invalid(format!("duplicate registry `{}`", registry.node_id)));
            }
        }
        for registry in &self.registries {
            for peer in &registry.peers {
                if !registry_ids.contains(peer.as_str()) {
                    return Err(invalid(format!(
                        "registry `{}` references unknown peer `{peer}`",
                        registry.node_id
                    )));
                }
            }
        }

        for layer in [
            ("input_filter", self.defenses.input_filter),
            ("causal_audit", self.defenses.causal_audit),
            ("tare", self.defenses.tare),
            ("attestation", self.defenses.attestation),
            ("jit", self.defenses.jit),
        ] {
            if !(0.0..=1.0).contains(&layer.1.detection) {
                return Err(invalid(format!("defense layer {} detection outside [0,1]", layer.0)));
            }
        }
        if !(0.0..=1.0).contains(&self.defenses.rescore_base) {
            return Err(invalid("rescore_base outside [0,1]"));
        }

        for (i, attack) in self.attacks.iter().enumerate() {
            for who in [&attack.attacker, &attack.target] {
                if !names.contains(who.as_str()) {
                    return Err(invalid(format!("attack {i} references unknown agent `{who}`")));
                }
            }
            attack
                .payload()
                .validate()
                .map_err(|e| invalid(format!("attack {i}: {e}")))?;
            let p = attack.phase_probs;
            for (label, v) in [
                ("inject", p.inject),
                ("persist", p.persist),
                ("trigger", p.trigger),
                ("execute", p.execute),
                ("evade", p.evade),
            ] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(invalid(format!("attack {i} phase prob {label} outside [0,1]")));
                }
            }
        }

        for (i, event) in self.schedule.iter().enumerate() {
            for agent in event.agent_refs() {
                if !names.contains(agent) {
                    return Err(invalid(format!("schedule event {i} references unknown agent `{agent}`")));
                }
            }
            if let ScheduledEvent::Sync { from, to, .. } = event {
                for node in [from, to] {
                    if !registry_ids.contains(node.as_str()) {
                        return Err(invalid(format!("schedule event {i} references unknown registry `{node}`")));
                    }
                }
                if from == to {
                    return Err(invalid(format!("schedule event {i} syncs a registry with itself")));
                }
            }
            if let ScheduledEvent::Report { score, .. } = event {
                if !(0.0..=1.0).contains(score) {
                    return Err(invalid(format!("schedule event {i} report score outside [0,1]")));
                }
            }
        }

        self.trust.weights()?;
        if self.trust.window == 0 {
            return Err(invalid("trust window must be positive"));
        }
        if self.trust.decay_lambda < 0.0 {
            return Err(invalid("decay_lambda must be non-negative"));
        }

        if let Some(policy) = &self.tare.containment {
            // Re-run the constructor checks serde bypassed.
            trustfabric_core::tare::ContainmentPolicy::new(
                policy.c_min,
                policy.c_max,
                policy.bands.clone(),
            )
            .map_err(|e| invalid(format!("tare containment table: {e}")))?;
        }

        if let Some(adversary) = &self.adversary {
            for (i, attack) in self.attacks.iter().enumerate() {
                adversary
                    .authorize_channel(attack.channel)
                    .map_err(|e| invalid(format!("attack {i}: {e}")))?;
            }
        }

        if let Some(mutations) = &self.mutations {
            if !(0.0..=1.0).contains(&mutations.probability) {
                return Err(invalid("mutation probability outside [0,1]"));
            }
        }
        Ok(())
    }
}
