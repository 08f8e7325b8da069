//! The deterministic discrete-event loop.
//!
//! Each tick processes, in order: scheduled events, attack FSM ticks, trust
//! steps for agents with fresh events, reflexive containment, behavioral
//! fingerprint updates, causal-audit detection (quarantine + rescoring),
//! and session boundaries. Every stochastic site draws from its own
//! seed-derived stream, so runs replay bit-identically and Monte Carlo
//! replicas are order-independent.
//!
//! When causal auditing is enabled the run is preceded by a shadow pass of
//! the same scenario with attacks disabled; the anomaly detectors learn
//! their baselines from that benign trace.

use std::collections::{BTreeMap, BTreeSet};

use trustfabric_core::ans::{AnsName, FederatedRegistry};
use trustfabric_core::attest::{
    attest, update_fingerprint, AttestContext, AttestOutcome, AttestationState,
    BehavioralFingerprint, CoSignature, EscalationEvidence, FINGERPRINT_DIM,
};
use trustfabric_core::audit::{
    detect_anomalies, trust_event_graph_rescore, AnomalyBaselines, AuditRecord, CausalGraph,
    CausalityParams, ChainFlag,
};
use trustfabric_core::crypto::{generate_keypair, sha256_tagged, KeyPair};
use trustfabric_core::embedding::embed;
use trustfabric_core::identity::{generate_did, issue_credential, AgentIdentity, Did};
use trustfabric_core::lpci::{
    tick_fsm, AttackContext, AttackEvent, AttackPhase, AttackState, DefenseLayer, LpciPayload,
    PhaseProbabilities,
};
use trustfabric_core::memory::{MemorySource, MemoryStore, Tier};
use trustfabric_core::policy::{authorize, AccessRequest, AuthEnv, Outcome, PolicySet};
use trustfabric_core::rng::DetRng;
use trustfabric_core::tare::{
    destroy_environment, provision_jit, ContainmentPolicy, JitConfig, TareController,
};
use trustfabric_core::trust::{
    ActionSample, ReputationReport, TrustConfig, TrustEvent, TrustState, TrustWeights,
};
use trustfabric_core::Tick;

use crate::metrics::{
    AttackReport, AvailabilityReport, FlagReport, RunReport, TrustPoint,
};
use crate::scenario::{AgentRole, AgentSpec, Scenario, ScenarioError, ScheduledEvent};

/// Result of one full run: the report plus the signed audit export.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub audit_export: String,
}

struct SimAgent {
    spec: AgentSpec,
    identity: AgentIdentity,
    ans_name: AnsName,
    memory: MemoryStore,
    trust: TrustState,
    attest: AttestationState,
    pending: Vec<TrustEvent>,
    external_calls_this_tick: u32,
    isolated: bool,
}

struct RunningAttack {
    index: usize,
    attacker: String,
    target: String,
    start_tick: Tick,
    payload: LpciPayload,
    probs: PhaseProbabilities,
    state: AttackState,
    rng: DetRng,
    /// Graph indices of records belonging to this attack's chain.
    records: Vec<usize>,
    executed_at: Option<Tick>,
    trust_before_execution: Option<f64>,
    trust_impact: f64,
    persistence_depth: u64,
    flagged: bool,
}

struct World<'a> {
    scenario: &'a Scenario,
    seed: u64,
    include_attacks: bool,
    agents: BTreeMap<String, SimAgent>,
    registries: BTreeMap<String, FederatedRegistry>,
    authority_did: Did,
    authority_keys: KeyPair,
    issuer_keys: BTreeMap<Did, Vec<u8>>,
    public_keys: BTreeMap<Did, Vec<u8>>,
    policy: PolicySet,
    weights: TrustWeights,
    trust_config: TrustConfig,
    tare: TareController,
    graph: CausalGraph,
    causality: CausalityParams,
    baselines: AnomalyBaselines,
    attacks: Vec<RunningAttack>,
    seen_flags: BTreeSet<String>,
    flags: Vec<FlagReport>,
    trace: Vec<String>,
    trust_history: Vec<TrustPoint>,
    enforcement_events: u64,
    jit_environments: u64,
    quarantined_entries: u64,
    legit_requests: u64,
    legit_successes: u64,
    service_used_this_tick: u32,
    context_events: BTreeSet<String>,
    pending_queries: BTreeMap<String, String>,
    two_factor_confirmed: BTreeSet<String>,
    session_index: usize,
    revoked_credentials: BTreeSet<String>,
}

/// Run a scenario to completion. `seed_override` replaces the scenario
/// seed when given.
pub fn run(scenario: &Scenario, seed_override: Option<u64>) -> Result<RunOutcome, ScenarioError> {
    let seed = seed_override.unwrap_or(scenario.seed);
    let baselines = if scenario.defenses.causal_audit.enabled {
        // Shadow pass: same seed, no attacks, detectors off; the benign
        // trace calibrates the detectors.
        let mut shadow = World::build(scenario, seed, false)?;
        shadow.run_loop();
        Some(AnomalyBaselines::learn_from(&shadow.graph))
    } else {
        None
    };
    let mut world = World::build(scenario, seed, true)?;
    if let Some(b) = baselines {
        world.baselines = b;
    }
    world.run_loop();
    Ok(world.finish())
}

impl<'a> World<'a> {
    fn build(scenario: &'a Scenario, seed: u64, include_attacks: bool) -> Result<Self, ScenarioError> {
        let weights = scenario.trust.weights()?;
        let trust_config = TrustConfig {
            bootstrap: scenario.trust.bootstrap,
            window: scenario.trust.window,
            decay_lambda: scenario.trust.decay_lambda,
            reputation_half_life: scenario.trust.reputation_half_life,
        };

        let authority_keys = generate_keypair(&mut DetRng::for_site(seed, "authority-keys", 0));
        let authority_did =
            generate_did(&mut DetRng::for_site(seed, "authority-did", 0), 128).expect("128 is valid");
        let mut issuer_keys = BTreeMap::new();
        issuer_keys.insert(authority_did.clone(), authority_keys.public_key.clone());

        let policy = PolicySet::load(&scenario.policies, &authority_keys)
            .map_err(|e| ScenarioError::Invalid(format!("policy: {e}")))?;

        // Registries share the authority as CA. Default to one node.
        let mut registries = BTreeMap::new();
        if scenario.registries.is_empty() {
            registries.insert(
                "registry-0".to_string(),
                FederatedRegistry::new("registry-0", authority_keys.clone()),
            );
        }
        for spec in &scenario.registries {
            let mut node = FederatedRegistry::new(spec.node_id.clone(), authority_keys.clone());
            node.peers = spec.peers.clone();
            registries.insert(spec.node_id.clone(), node);
        }
        let home_registry = registries.keys().next().expect("at least one").clone();

        let mut agents = BTreeMap::new();
        let mut public_keys = BTreeMap::new();
        for spec in &scenario.agents {
            let mut rng = DetRng::for_site(seed, &format!("agent:{}", spec.name), 0);
            let did = generate_did(&mut rng, 128).expect("128 is valid");
            let keys = generate_keypair(&mut rng);
            let mut identity = AgentIdentity::new(did.clone(), keys.clone());
            identity.context.clearance_level = spec.clearance_level;
            identity.context.authorized_hours = spec.authorized_hours;

            let ans_name = match &spec.register_name {
                Some(text) => AnsName::parse(text).expect("validated at load"),
                None => AnsName::parse(&format!(
                    "a2a://{}.Sim.{}.v1.none",
                    spec.capabilities.first().map(String::as_str).unwrap_or("generalist"),
                    spec.name
                ))
                .expect("synthesized name is well-formed"),
            };

            // The authority attests every declared capability, plus the
            // capability offered in the registered name, for the whole run.
            let horizon = scenario.total_ticks().max(1) * 4;
            let mut evidence = BTreeMap::new();
            let mut attested: Vec<String> = spec.capabilities.clone();
            if !attested.contains(&ans_name.capability) {
                attested.push(ans_name.capability.clone());
            }
            for capability in &attested {
                let vc = issue_credential(
                    &authority_keys,
                    &authority_did,
                    &did,
                    [(capability.clone(), "true".to_string())].into(),
                    (0, horizon),
                )
                .expect("non-empty claims");
                identity.credentials.push(vc.clone());
                identity.capabilities.insert(capability.clone());
                evidence.insert(capability.clone(), vc);
            }

            let registry = registries.get_mut(&home_registry).expect("exists");
            registry
                .register(
                    &identity,
                    ans_name.clone(),
                    &evidence,
                    &issuer_keys,
                    spec.initial_trust,
                    0,
                    &mut DetRng::for_site(seed, &format!("register:{}", spec.name), 0),
                )
                .map_err(|e| {
                    ScenarioError::Invalid(format!("registration of `{}` failed: {e}", spec.name))
                })?;

            let mut trust = TrustState::new(did.clone(), &trust_config);
            trust.behavioral = spec.initial_trust;
            trust.reputation = spec.initial_trust;
            trust.historical = spec.initial_trust;
            trust.compliance = spec.initial_trust;
            trust.composite = spec.initial_trust;

            public_keys.insert(did.clone(), keys.public_key.clone());
            agents.insert(
                spec.name.clone(),
                SimAgent {
                    spec: spec.clone(),
                    identity,
                    ans_name,
                    memory: MemoryStore::new(did, scenario.embedding_dim),
                    trust,
                    attest: AttestationState::with_defaults(BehavioralFingerprint::zeros()),
                    pending: Vec::new(),
                    external_calls_this_tick: 0,
                    isolated: false,
                },
            );
        }

        let attacks = if include_attacks {
            scenario
                .attacks
                .iter()
                .enumerate()
                .map(|(index, spec)| {
                    let payload = spec.payload();
                    // The input filter folds into the inject probability,
                    // exactly the `stealth * (1 - filter)` form.
                    let filter = if scenario.defenses.input_filter.enabled {
                        scenario.defenses.input_filter.detection
                    } else {
                        0.0
                    };
                    let probs = PhaseProbabilities {
                        inject: spec.phase_probs.inject * payload.stealth * (1.0 - filter),
                        persist: spec.phase_probs.persist,
                        trigger: spec.phase_probs.trigger,
                        execute: spec.phase_probs.execute,
                        evade: spec.phase_probs.evade,
                    };
                    RunningAttack {
                        index,
                        attacker: spec.attacker.clone(),
                        target: spec.target.clone(),
                        start_tick: spec.start_tick,
                        payload,
                        probs,
                        state: AttackState::new(spec.start_tick),
                        rng: DetRng::for_site(seed, &format!("attack:{index}"), 0),
                        records: Vec::new(),
                        executed_at: None,
                        trust_before_execution: None,
                        trust_impact: 0.0,
                        persistence_depth: 0,
                        flagged: false,
                    }
                })
                .collect()
        } else {
            Vec::new()
        };

        Ok(World {
            scenario,
            seed,
            include_attacks,
            agents,
            registries,
            authority_did,
            authority_keys,
            issuer_keys,
            public_keys,
            policy,
            weights,
            trust_config,
            tare: TareController::new(
                scenario
                    .tare
                    .containment
                    .clone()
                    .unwrap_or_else(ContainmentPolicy::default_policy),
                scenario.tare.hysteresis,
            ),
            graph: CausalGraph::new(),
            causality: CausalityParams::default(),
            baselines: AnomalyBaselines::default(),
            attacks,
            seen_flags: BTreeSet::new(),
            flags: Vec::new(),
            trace: Vec::new(),
            trust_history: Vec::new(),
            enforcement_events: 0,
            jit_environments: 0,
            quarantined_entries: 0,
            legit_requests: 0,
            legit_successes: 0,
            service_used_this_tick: 0,
            context_events: BTreeSet::new(),
            pending_queries: BTreeMap::new(),
            two_factor_confirmed: BTreeSet::new(),
            session_index: 0,
            revoked_credentials: BTreeSet::new(),
        })
    }

    fn composite_of(&self, name: &str) -> f64 {
        self.agents[name].trust.composite
    }

    fn record(&mut self, agent_name: &str, context: &str, input: &[u8], output: &[u8], tick: Tick) -> usize {
        let agent = &self.agents[agent_name];
        let keys = agent.identity.keys.clone();
        let did = agent.identity.did.clone();
        let ans = agent.ans_name.clone();
        let credentials: Vec<String> =
            agent.identity.credentials.iter().map(|vc| vc.id.clone()).collect();
        let composites: BTreeMap<Did, f64> = self
            .agents
            .values()
            .map(|a| (a.identity.did.clone(), a.trust.composite))
            .collect();
        let relationship = move |a: &Did, b: &Did| {
            if a == b {
                1.0
            } else {
                composites.get(a).copied().unwrap_or(0.0).min(composites.get(b).copied().unwrap_or(0.0))
            }
        };
        self.graph.record_action(
            &keys,
            &did,
            &ans,
            credentials,
            input,
            output,
            context,
            tick,
            &self.causality,
            &relationship,
        )
    }

    fn run_loop(&mut self) {
        let total = self.scenario.total_ticks();
        for now in 0..total {
            self.context_events.clear();
            self.pending_queries.clear();
            self.two_factor_confirmed.clear();
            self.service_used_this_tick = 0;
            for agent in self.agents.values_mut() {
                agent.external_calls_this_tick = 0;
            }

            // 1. Scheduled events, in file order.
            let events: Vec<ScheduledEvent> = self
                .scenario
                .schedule
                .iter()
                .filter(|e| e.tick() == now)
                .cloned()
                .collect();
            for event in events {
                self.process_event(&event, now);
            }

            // 2. Attack FSM ticks.
            if self.include_attacks {
                self.tick_attacks(now);
            }

            // 3. Trust steps for agents with fresh events.
            self.step_trust(now);

            // 4. Reflexive containment on updated trust.
            if self.scenario.defenses.tare.enabled {
                self.apply_tare(now);
            }

            // 5. Behavioral fingerprints.
            if self.scenario.defenses.attestation.enabled {
                self.update_fingerprints(now);
            }

            // 6. Causal-audit detection, quarantine and rescoring.
            if self.scenario.defenses.causal_audit.enabled {
                self.detect_and_react(now);
            }

            // 7. Trust impact snapshots: the drop across the execution tick,
            // measured after detection and rescoring have reacted.
            for i in 0..self.attacks.len() {
                if self.attacks[i].executed_at == Some(now) {
                    if let Some(before) = self.attacks[i].trust_before_execution {
                        let after = self.composite_of(&self.attacks[i].target.clone());
                        self.attacks[i].trust_impact = (before - after).clamp(-1.0, 1.0);
                    }
                }
            }

            // 8. Session boundary.
            if let Some(&(_, end)) = self.scenario.sessions.get(self.session_index) {
                if now == end {
                    self.end_session(now);
                    self.session_index += 1;
                }
            }
        }
    }

    fn process_event(&mut self, event: &ScheduledEvent, now: Tick) {
        match event {
            ScheduledEvent::Context { label, .. } => {
                self.context_events.insert(label.clone());
            }
            ScheduledEvent::Action { agent, action, expected, .. } => {
                if self.agents[agent.as_str()].isolated {
                    self.trace.push(format!("t{now} action `{action}` by {agent} blocked: isolated"));
                    return;
                }
                let similarity = {
                    let dim = self.scenario.embedding_dim;
                    trustfabric_core::embedding::cosine(&embed(action, dim), &embed(expected, dim))
                };
                let io = format!("{agent}:{action}:{now}");
                self.record(agent, action, io.as_bytes(), io.as_bytes(), now);
                let dim = self.scenario.embedding_dim;
                let trust_score = self.composite_of(agent);
                let a = self.agents.get_mut(agent).expect("validated");
                a.pending.push(TrustEvent::Action(ActionSample {
                    action: action.clone(),
                    expected: expected.clone(),
                    similarity,
                    compliant: true,
                }));
                let source = MemorySource::Agent(a.identity.did.clone());
                let embedding = embed(action, dim);
                let _ = a.memory.append(
                    action.clone(),
                    source,
                    trust_score.clamp(0.0, 1.0),
                    embedding,
                    Tier::ShortTerm,
                    now,
                );
            }
            ScheduledEvent::Phrase { to, text, .. } => {
                let dim = self.scenario.embedding_dim;
                let query = embed(text, dim);
                let top_content = {
                    let store = &self.agents[to.as_str()].memory;
                    store
                        .retrieve(&query, 1)
                        .ok()
                        .and_then(|hits| hits.first().map(|e| e.content.clone()))
                        .unwrap_or_default()
                };
                self.record(to, "retrieval", text.as_bytes(), top_content.as_bytes(), now);
                self.pending_queries.insert(to.clone(), text.clone());
            }
            ScheduledEvent::ServiceRequest { agent, capability, .. } => {
                self.process_service_request(agent, capability, now);
            }
            ScheduledEvent::Report { reporter, subject, score, .. } => {
                let reporter_agent = &self.agents[reporter.as_str()];
                let report = ReputationReport::signed(
                    &reporter_agent.identity.keys,
                    &reporter_agent.identity.did,
                    &self.agents[subject.as_str()].identity.did,
                    *score,
                    now,
                );
                self.agents
                    .get_mut(subject)
                    .expect("validated")
                    .pending
                    .push(TrustEvent::Reputation(report));
            }
            ScheduledEvent::Sync { from, to, .. } => {
                // Refresh trust snapshots before the exchange.
                let composites: Vec<(Did, f64)> = self
                    .agents
                    .values()
                    .map(|a| (a.identity.did.clone(), a.trust.composite))
                    .collect();
                for node in self.registries.values_mut() {
                    for (did, trust) in &composites {
                        node.refresh_trust(did, *trust);
                    }
                }
                let mut a = self.registries.remove(from).expect("validated");
                let mut b = self.registries.remove(to).expect("validated");
                let (entries, revocations) = trustfabric_core::ans::sync(&mut a, &mut b);
                self.revoked_credentials.extend(a.revoked_credentials.iter().cloned());
                self.registries.insert(from.clone(), a);
                self.registries.insert(to.clone(), b);
                self.trace.push(format!(
                    "t{now} sync {from}<->{to}: {entries} entries, {revocations} revocations"
                ));
            }
            ScheduledEvent::JitTask { agent, task, .. } => {
                self.run_jit_task(agent, task, now);
            }
            ScheduledEvent::TwoFactor { agent, .. } => {
                self.two_factor_confirmed.insert(agent.clone());
            }
            ScheduledEvent::Message { from, to, content, .. } => {
                // Sender emits at `now`; the recipient's processing record
                // lands a tick later so the data dependency chains.
                self.record(from, "inter_agent_message", content.as_bytes(), content.as_bytes(), now);
                self.record(to, "inter_agent_message", content.as_bytes(), content.as_bytes(), now + 1);
            }
        }
    }

    fn process_service_request(&mut self, agent_name: &str, capability: &str, now: Tick) {
        let is_legit = self.agents[agent_name].spec.role != AgentRole::Attacker;
        if is_legit {
            self.legit_requests += 1;
        }

        // TARE restriction cap on the requester.
        if self.scenario.defenses.tare.enabled {
            let trust = self.composite_of(agent_name);
            let cap = self
                .tare
                .restrictions_for_trust(trust.clamp(0.0, 1.0))
                .map(|r| r.max_external_calls_per_tick)
                .unwrap_or(0);
            let used = self.agents[agent_name].external_calls_this_tick;
            if self.agents[agent_name].isolated || used >= cap {
                self.trace
                    .push(format!("t{now} service request by {agent_name} blocked: containment"));
                return;
            }
        }
        self.agents.get_mut(agent_name).expect("validated").external_calls_this_tick += 1;

        // Shared capacity.
        if self.service_used_this_tick >= self.scenario.service.capacity_per_tick {
            self.trace
                .push(format!("t{now} service request by {agent_name} failed: capacity exhausted"));
            return;
        }

        // Policy authorization.
        let agent = &self.agents[agent_name];
        let speaker = match agent.spec.role {
            AgentRole::Attacker | AgentRole::User => "external_user",
            _ => "internal",
        };
        let request = AccessRequest {
            subject: agent.identity.did.clone(),
            capability: capability.to_string(),
            tool_call: Some(format!("{capability}()")),
            speaker: speaker.to_string(),
            data_classification: 0,
            clearance_level: agent.spec.clearance_level,
            now,
            authorized_hours: agent.spec.authorized_hours,
            presented_credentials: agent.identity.credentials.clone(),
        };
        let env = AuthEnv {
            issuer_keys: &self.issuer_keys,
            revoked_credentials: &self.revoked_credentials,
            day_length: self.scenario.day_length,
        };
        let decision = authorize(&self.policy.rules, &request, self.composite_of(agent_name), true, &env);
        match decision.outcome {
            // The engine attaches obligations; the harness enforces them.
            Outcome::GrantWithObligations(obligations)
                if !self.two_factor_confirmed.contains(agent_name) =>
            {
                self.trace.push(format!(
                    "t{now} service request by {agent_name} held: obligations {obligations:?} unmet"
                ));
            }
            Outcome::Grant | Outcome::GrantWithObligations(_) => {
                self.service_used_this_tick += 1;
                if is_legit {
                    self.legit_successes += 1;
                }
                let payload = format!("{agent_name}:{capability}:{now}");
                self.record(agent_name, "authorization", payload.as_bytes(), payload.as_bytes(), now);
                self.record(
                    agent_name,
                    &format!("tool_call:{capability}()"),
                    payload.as_bytes(),
                    format!("{capability} served").as_bytes(),
                    now,
                );
            }
            Outcome::Deny => {
                self.trace
                    .push(format!("t{now} service request by {agent_name} denied by policy"));
            }
        }
    }

    fn run_jit_task(&mut self, agent_name: &str, task: &str, now: Tick) {
        let agent = &self.agents[agent_name];
        let outcome = provision_jit(
            &agent.identity.did,
            task,
            agent.trust.composite.clamp(0.0, 1.0),
            &self.tare.policy,
            &self.authority_keys,
            &self.authority_did,
            &JitConfig {
                trust_floor: self.scenario.tare.jit_trust_floor,
                credential_ttl: self.scenario.tare.jit_credential_ttl,
                embedding_dim: self.scenario.embedding_dim,
            },
            now,
            self.jit_environments,
        );
        match outcome {
            Ok((mut env, mut events)) => {
                self.jit_environments += 1;
                let exec = trustfabric_core::tare::check_task_execution(
                    &env,
                    &self.authority_keys.public_key,
                    now,
                );
                match exec {
                    Ok(event) => events.push(event),
                    Err(_) => self.trace.push(format!("t{now} jit task `{task}` aborted")),
                }
                events.push(destroy_environment(&mut env, now + 1));
                // Lifecycle stages are provenance: they join the signed
                // audit export alongside everything else.
                for e in &events {
                    self.trace.push(format!("t{} jit {:?} {}", e.tick, e.stage, e.detail));
                    let body = format!("{}:{}", e.environment_id, e.detail);
                    self.record(
                        agent_name,
                        &format!("jit:{:?}", e.stage),
                        body.as_bytes(),
                        body.as_bytes(),
                        e.tick,
                    );
                }
            }
            Err(e) => {
                self.trace.push(format!("t{now} jit task `{task}` rejected: {e}"));
            }
        }
    }

    fn tick_attacks(&mut self, now: Tick) {
        let jit_layers: Vec<DefenseLayer> = if self.scenario.defenses.jit.enabled {
            // Ephemeral environments structurally deny long-term residence:
            // the staged payload dies with the task environment.
            vec![DefenseLayer { name: "jit_environment".into(), detection: 1.0, crossing: 1 }]
        } else {
            Vec::new()
        };
        let audit_tamper_proof = self.scenario.defenses.causal_audit.enabled;

        for i in 0..self.attacks.len() {
            if self.attacks[i].start_tick > now || self.attacks[i].state.phase.is_terminal() {
                continue;
            }
            let target_name = self.attacks[i].target.clone();
            let pending_query = self.pending_queries.get(&target_name).cloned();
            let attacker_trust = self.composite_of(&self.attacks[i].attacker);
            let mut state = self.attacks[i].state.clone();
            let payload = self.attacks[i].payload.clone();
            let probs = self.attacks[i].probs;
            let mut rng = self.attacks[i].rng.clone();
            let context_events = self.context_events.clone();

            let (next, events) = {
                let target = &mut self.agents.get_mut(&target_name).expect("validated").memory;
                let ctx = AttackContext {
                    probs: &probs,
                    layers: &jit_layers,
                    context_events: &context_events,
                    pending_query: pending_query.as_deref(),
                    audit_tamper_proof,
                    source_trust: attacker_trust,
                    now,
                };
                tick_fsm(&state, &payload, target, &ctx, &mut rng)
            };
            state = next;
            self.attacks[i].rng = rng;
            self.attacks[i].state = state;

            for event in events {
                self.handle_attack_event(i, &target_name, &payload, event, now);
            }
        }
    }

    fn handle_attack_event(
        &mut self,
        attack_index: usize,
        target: &str,
        payload: &LpciPayload,
        event: AttackEvent,
        now: Tick,
    ) {
        match event {
            AttackEvent::PayloadStored { disguise, .. } => {
                // The poisoned upload enters through the target's input
                // surface.
                let idx = self.record(
                    target,
                    "external_input",
                    payload.payload_text.as_bytes(),
                    payload.payload_text.as_bytes(),
                    now,
                );
                self.attacks[attack_index].records.push(idx);
                self.trace.push(format!(
                    "t{now} attack{attack_index} payload stored as `{disguise}` in {target} memory"
                ));
                if self.scenario.defenses.jit.enabled {
                    // The upload is being processed inside an ephemeral
                    // environment; its destruction next tick takes the
                    // payload with it.
                    self.run_jit_task(target, "process_upload", now);
                }
            }
            AttackEvent::PhaseAdvanced { ref from, ref to, .. } => {
                if to == "q2" {
                    let idx = self.record(
                        target,
                        "memory_write",
                        payload.payload_text.as_bytes(),
                        payload.payload_text.as_bytes(),
                        now,
                    );
                    self.attacks[attack_index].records.push(idx);
                }
                self.trace
                    .push(format!("t{now} attack{attack_index} {from} -> {to}"));
            }
            AttackEvent::Triggered { .. } => {
                // The retrieval record for the trigger query was already
                // written while processing the phrase event this tick; pull
                // it into the attack's chain.
                if let Some(idx) = self
                    .graph
                    .records
                    .iter()
                    .rposition(|r| r.tick == now && r.context == "retrieval")
                {
                    self.attacks[attack_index].records.push(idx);
                }
                self.trace.push(format!("t{now} attack{attack_index} triggered"));
            }
            AttackEvent::Damage { kind, magnitude, ref tool_call, .. } => {
                let tool = tool_call.clone().unwrap_or_else(|| "unknown_tool()".to_string());
                self.attacks[attack_index].trust_before_execution = Some(self.composite_of(target));
                self.attacks[attack_index].executed_at = Some(now);
                let idx = self.record(
                    target,
                    &format!("tool_call:{tool}"),
                    payload.payload_text.as_bytes(),
                    format!("{tool} executed").as_bytes(),
                    now,
                );
                self.attacks[attack_index].records.push(idx);
                let a = self.agents.get_mut(target).expect("validated");
                a.pending.push(TrustEvent::Action(ActionSample {
                    action: format!("unauthorized {tool}"),
                    expected: "routine operation".into(),
                    similarity: 0.0,
                    compliant: false,
                }));
                self.trace.push(format!(
                    "t{now} attack{attack_index} damage: {kind:?} magnitude {magnitude} via {tool}"
                ));
            }
            AttackEvent::SanitizationSucceeded { .. } => {
                let records = self.attacks[attack_index].records.clone();
                self.graph.sanitize(&records, false);
                self.trace
                    .push(format!("t{now} attack{attack_index} sanitized its audit trail"));
            }
            AttackEvent::SanitizationFailed { tamper_recorded, .. } => {
                if tamper_recorded {
                    let attacker = self.attacks[attack_index].attacker.clone();
                    self.record(&attacker, "tamper_attempt", b"sanitize audit log", b"denied", now);
                }
                self.trace
                    .push(format!("t{now} attack{attack_index} sanitization failed"));
            }
            AttackEvent::Blocked { ref by, ref phase, .. } => {
                self.trace
                    .push(format!("t{now} attack{attack_index} blocked at {phase} by {by}"));
            }
        }
    }

    fn step_trust(&mut self, now: Tick) {
        let names: Vec<String> = self.agents.keys().cloned().collect();
        for name in names {
            let pending = std::mem::take(&mut self.agents.get_mut(&name).expect("exists").pending);
            if pending.is_empty() {
                continue;
            }
            self.step_agent(&name, now, &pending);
        }
    }

    fn step_agent(&mut self, name: &str, now: Tick, events: &[TrustEvent]) {
        let agent = self.agents.get_mut(name).expect("exists");
        match trustfabric_core::trust::step(
            &agent.trust,
            &self.weights,
            &self.trust_config,
            now,
            events,
            &self.public_keys,
        ) {
            Ok(next) => {
                agent.trust = next;
                self.trust_history.push(TrustPoint {
                    tick: now,
                    agent: name.to_string(),
                    behavioral: agent.trust.behavioral,
                    reputation: agent.trust.reputation,
                    historical: agent.trust.historical,
                    compliance: agent.trust.compliance,
                    composite: agent.trust.composite,
                });
            }
            Err(e) => self.trace.push(format!("t{now} trust step for {name} failed: {e}")),
        }
    }

    fn apply_tare(&mut self, now: Tick) {
        let snapshots: Vec<(String, Did, f64)> = self
            .agents
            .values()
            .map(|a| (a.spec.name.clone(), a.identity.did.clone(), a.trust.composite))
            .collect();
        for (name, did, trust) in snapshots {
            match self.tare.on_trust_change(&did, trust.clamp(0.0, 1.0), now) {
                Ok(Some(event)) => {
                    self.enforcement_events += 1;
                    let agent = self.agents.get_mut(&name).expect("exists");
                    agent.isolated = event.restrictions.isolated;
                    self.trace.push(format!(
                        "t{now} containment band {} for {name} (trust {trust:.3}, isolated {})",
                        event.band, event.restrictions.isolated
                    ));
                }
                Ok(None) => {}
                Err(e) => self.trace.push(format!("t{now} containment error for {name}: {e}")),
            }
        }
    }

    fn update_fingerprints(&mut self, now: Tick) {
        let day = self.scenario.day_length;
        let session_fraction = {
            let total = self.scenario.sessions.len().max(1);
            self.session_index as f64 / total as f64
        };
        let names: Vec<String> = self.agents.keys().cloned().collect();
        for name in names {
            let did = self.agents[&name].identity.did.clone();
            let records: Vec<&AuditRecord> = self
                .graph
                .records
                .iter()
                .filter(|r| r.tick == now && r.actor == did)
                .collect();
            if records.is_empty() {
                continue;
            }
            let observation = extract_observation(&records, now, day, session_fraction);
            let agent = self.agents.get_mut(&name).expect("exists");
            if let Err(e) = update_fingerprint(&mut agent.attest, &observation) {
                self.trace.push(format!("t{now} fingerprint update failed for {name}: {e}"));
            }
        }
    }

    fn detect_and_react(&mut self, now: Tick) {
        let found = detect_anomalies(&self.graph, &self.baselines);
        let mut fresh: Vec<ChainFlag> = Vec::new();
        for flag in found {
            let key = format!("{:?}:{:?}", flag.detector, flag.record_indices);
            if self.seen_flags.insert(key) {
                fresh.push(flag);
            }
        }
        if fresh.is_empty() {
            return;
        }

        for flag in &fresh {
            self.flags.push(FlagReport {
                detector: flag.detector,
                tick: now,
                actors: flag.actors.iter().map(|d| d.to_string()).collect(),
                reason: flag.reason.clone(),
                severity: flag.severity,
                record_indices: flag.record_indices.clone(),
            });
            self.trace.push(format!(
                "t{now} flag {:?} severity {:.2}: {}",
                flag.detector, flag.severity, flag.reason
            ));

            for i in 0..self.attacks.len() {
                let overlaps = self.attacks[i]
                    .records
                    .iter()
                    .any(|r| flag.record_indices.contains(r));
                if !overlaps {
                    continue;
                }
                // An execution only counts as caught when a flag lands on
                // the attack's chain at or after the execution tick.
                if self.attacks[i].executed_at.is_some_and(|t| now >= t) {
                    self.attacks[i].flagged = true;
                }
                // Rarity and timing flags raise suspicion (rescoring);
                // quarantine is reserved for the data-flow detector, which
                // pinpoints the poisoned chain.
                if flag.detector != trustfabric_core::audit::Detector::UnauthorizedDataFlow {
                    continue;
                }
                if let Some(hash) = self.attacks[i].state.planted_entry {
                    let target = self.attacks[i].target.clone();
                    let store = &mut self.agents.get_mut(&target).expect("exists").memory;
                    if let Some(pos) = store.long_term.iter().position(|e| e.entry_hash == hash) {
                        if let Ok(count) = store.quarantine_from(pos) {
                            self.quarantined_entries += count as u64;
                            self.trace.push(format!(
                                "t{now} quarantined {count} entries from {target} memory at index {pos}"
                            ));
                        }
                    }
                }
            }
        }

        // Rescore: flagged actors take trust penalties, applied immediately.
        let deltas = trust_event_graph_rescore(&self.graph, &fresh, self.scenario.defenses.rescore_base);
        for (did, delta) in deltas {
            if delta == 0.0 {
                continue;
            }
            let name = self
                .agents
                .values()
                .find(|a| a.identity.did == did)
                .map(|a| a.spec.name.clone());
            if let Some(name) = name {
                self.step_agent(&name, now, &[TrustEvent::AuditDelta(delta)]);
                self.trace.push(format!("t{now} rescore {name} by {delta:.3}"));
            }
        }
    }

    fn end_session(&mut self, now: Tick) {
        // Persistence accounting precedes the wipe: an unrevoked planted
        // entry crossing this boundary survived one more session.
        for attack in &mut self.attacks {
            if let Some(hash) = attack.state.planted_entry {
                let store = &self.agents[&attack.target].memory;
                let resident = store
                    .long_term
                    .iter()
                    .any(|e| e.entry_hash == hash && !e.revoked);
                if resident {
                    attack.persistence_depth += 1;
                }
            }
        }
        for agent in self.agents.values_mut() {
            agent.memory.end_session(now);
        }
        // Enrollment: the first session's behavior becomes the baseline.
        if self.scenario.defenses.attestation.enabled && self.session_index == 0 {
            for agent in self.agents.values_mut() {
                agent.attest.baseline = agent.attest.current.clone();
            }
        } else if self.scenario.defenses.attestation.enabled {
            self.attest_agents(now);
        }
        self.trace.push(format!("t{now} session {} ended", self.session_index));
    }

    fn attest_agents(&mut self, now: Tick) {
        let guardian = self
            .agents
            .values()
            .find(|a| a.spec.role == AgentRole::Guardian)
            .map(|a| (a.identity.did.clone(), a.identity.keys.clone()));
        let (guardian_did, guardian_keys) = match guardian {
            Some(g) => g,
            None => (self.authority_did.clone(), self.authority_keys.clone()),
        };
        let names: Vec<String> = self.agents.keys().cloned().collect();
        for name in names {
            let agent = &self.agents[&name];
            let registered_key = agent.identity.keys.public_key.clone();
            let mut rng = DetRng::for_site(self.seed, &format!("attest:{name}"), now);
            let co = CoSignature::sign(&guardian_keys, &guardian_did, &agent.identity.did, now);
            let outcome = {
                let agent = &self.agents[&name];
                let ctx = AttestContext {
                    registered_key: &registered_key,
                    guardian: &guardian_did,
                    guardian_key: &guardian_keys.public_key,
                    now,
                };
                let evidence = EscalationEvidence { co_signature: Some(&co), memory: &agent.memory };
                attest(&agent.attest, &agent.identity, &ctx, Some(&evidence), &mut rng)
            };
            match outcome {
                AttestOutcome::Pass { escalated: true, .. } => {
                    self.trace.push(format!("t{now} attestation of {name}: pass after escalation"));
                }
                AttestOutcome::Pass { .. } => {}
                AttestOutcome::Escalate(_) => unreachable!("evidence supplied"),
                AttestOutcome::Fail(factor) => {
                    self.trace.push(format!("t{now} attestation of {name} failed: {factor:?}"));
                    self.step_agent(&name, now, &[TrustEvent::AuditDelta(-0.2)]);
                }
            }
        }
    }

    fn finish(self) -> RunOutcome {
        let attack_reports: Vec<AttackReport> = self
            .attacks
            .iter()
            .map(|a| AttackReport {
                index: a.index,
                attacker: a.attacker.clone(),
                target: a.target.clone(),
                final_phase: a.state.phase.code().to_string(),
                executed_at: a.executed_at,
                persistence_depth: a.persistence_depth,
                flagged: a.flagged,
                trust_impact: a.trust_impact,
                transitions: a
                    .state
                    .history
                    .iter()
                    .map(|t| format!("{}->{}@{}", t.from.code(), t.to.code(), t.tick))
                    .collect(),
            })
            .collect();

        let successes = self
            .attacks
            .iter()
            .filter(|a| a.state.phase == AttackPhase::Complete)
            .count();
        let success_rate = if self.attacks.is_empty() {
            0.0
        } else {
            successes as f64 / self.attacks.len() as f64
        };
        let executions = self.attacks.iter().filter(|a| a.executed_at.is_some()).count();
        let evaded = self
            .attacks
            .iter()
            .filter(|a| a.executed_at.is_some() && !a.flagged)
            .count();
        let trigger_evasion_rate = if executions == 0 {
            0.0
        } else {
            evaded as f64 / executions as f64
        };

        let fraction = if self.legit_requests == 0 {
            1.0
        } else {
            self.legit_successes as f64 / self.legit_requests as f64
        };

        let report = RunReport {
            scenario: self.scenario.name.clone(),
            seed: self.seed,
            ticks: self.scenario.total_ticks(),
            success_rate,
            persistence_depth: self.attacks.iter().map(|a| a.persistence_depth).max().unwrap_or(0),
            trigger_evasion_rate,
            trust_impact: self
                .attacks
                .iter()
                .map(|a| a.trust_impact)
                .fold(0.0, f64::max),
            attacks: attack_reports,
            flags: self.flags,
            availability: AvailabilityReport {
                legitimate_requests: self.legit_requests,
                legitimate_successes: self.legit_successes,
                fraction,
            },
            enforcement_events: self.enforcement_events,
            jit_environments: self.jit_environments,
            quarantined_entries: self.quarantined_entries,
            final_trust: self
                .agents
                .values()
                .map(|a| (a.spec.name.clone(), a.trust.composite))
                .collect(),
            trust_history: self.trust_history,
            trace: self.trace,
        };
        let audit_export = self.graph.export_jsonl();
        RunOutcome { report, audit_export }
    }
}

/// Deterministic 24-dim observation from one tick's audit records.
fn extract_observation(
    records: &[&AuditRecord],
    now: Tick,
    day_length: Tick,
    session_fraction: f64,
) -> [f64; FINGERPRINT_DIM] {
    let mut v = [0.0; FINGERPRINT_DIM];
    let n = records.len() as f64;
    // Decision patterns: context-hash histogram.
    for r in records {
        let h = sha256_tagged("obs-decision", r.context.as_bytes());
        v[(h[0] % 8) as usize] += 1.0 / n;
    }
    // Interaction style: organization-hash histogram.
    for r in records {
        let h = sha256_tagged("obs-interaction", r.ans_name.organization.as_bytes());
        v[8 + (h[0] % 8) as usize] += 1.0 / n;
    }
    // Resource usage: action-kind mix.
    for r in records {
        let slot = if r.context.starts_with("tool_call:") {
            16
        } else if r.context == "memory_write" {
            17
        } else if r.context == "retrieval" {
            18
        } else {
            19
        };
        v[slot] += 1.0 / n;
    }
    // Temporal patterns.
    v[20] = (records.len() as f64 / 4.0).min(1.0);
    v[21] = (now % day_length) as f64 / day_length as f64;
    v[22] = session_fraction;
    v[23] = 0.0;
    v
}
