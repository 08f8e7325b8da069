//! Trust-adaptive runtime environments: containment-level computation, a
//! monotone restriction step table with hysteresis, and the six-stage
//! ephemeral just-in-time environment lifecycle.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::KeyPair;
use crate::identity::{verify_credential, CredentialStatus, Did, VerifiableCredential};
use crate::memory::MemoryStore;
use crate::policy::jit_credential;
use crate::Tick;

#[derive(Debug, Error, PartialEq)]
pub enum TareError {
    #[error("trust {0} outside [0, 1]")]
    TrustOutOfRange(f64),
    #[error("containment bounds require 0 <= c_min < c_max")]
    BadBounds,
    #[error("step-table thresholds must strictly increase and restrictions must tighten")]
    BadStepTable,
    #[error("jit request rejected at trust assessment: trust {trust} below floor {floor}")]
    TrustBelowFloor { trust: f64, floor: f64 },
    #[error("jit environment is not active")]
    NotActive,
    #[error("authorizing credential no longer valid: {0:?}")]
    CredentialInvalid(CredentialStatus),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
}

/// Audit verbosity tiers, least to most detailed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditVerbosity {
    Basic,
    Detailed,
    Full,
}

/// Concrete restrictions applied to an agent's runtime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestrictionSet {
    pub max_external_calls_per_tick: u32,
    pub audit_verbosity: AuditVerbosity,
    pub approval_required: bool,
    pub isolated: bool,
}

impl RestrictionSet {
    /// True when `self` is at least as restrictive as `other` in every
    /// dimension.
    pub fn tightens(&self, other: &RestrictionSet) -> bool {
        self.max_external_calls_per_tick <= other.max_external_calls_per_tick
            && self.audit_verbosity >= other.audit_verbosity
            && self.approval_required >= other.approval_required
            && self.isolated >= other.isolated
    }
}

/// Containment policy: the level formula bounds plus the monotone step
/// table mapping levels to restrictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainmentPolicy {
    pub c_min: f64,
    pub c_max: f64,
    /// `(threshold, restrictions)` bands; the band with the greatest
    /// threshold not exceeding the level applies.
    pub bands: Vec<(f64, RestrictionSet)>,
}

impl ContainmentPolicy {
    pub fn new(c_min: f64, c_max: f64, bands: Vec<(f64, RestrictionSet)>) -> Result<Self, TareError> {
        if !(0.0 <= c_min && c_min < c_max) {
            return Err(TareError::BadBounds);
        }
        if bands.is_empty() {
            return Err(TareError::BadStepTable);
        }
        for pair in bands.windows(2) {
            if pair[1].0 <= pair[0].0 || !pair[1].1.tightens(&pair[0].1) {
                return Err(TareError::BadStepTable);
            }
        }
        Ok(Self { c_min, c_max, bands })
    }

    /// Default four-band table over normalized containment levels.
    pub fn default_policy() -> Self {
        Self::new(
            0.0,
            1.0,
            vec![
                (
                    0.0,
                    RestrictionSet {
                        max_external_calls_per_tick: 8,
                        audit_verbosity: AuditVerbosity::Basic,
                        approval_required: false,
                        isolated: false,
                    },
                ),
                (
                    0.2,
                    RestrictionSet {
                        max_external_calls_per_tick: 4,
                        audit_verbosity: AuditVerbosity::Detailed,
                        approval_required: false,
                        isolated: false,
                    },
                ),
                (
                    0.4,
                    RestrictionSet {
                        max_external_calls_per_tick: 2,
                        audit_verbosity: AuditVerbosity::Detailed,
                        approval_required: true,
                        isolated: false,
                    },
                ),
                (
                    0.6,
                    RestrictionSet {
                        max_external_calls_per_tick: 0,
                        audit_verbosity: AuditVerbosity::Full,
                        approval_required: true,
                        isolated: true,
                    },
                ),
            ],
        )
        .expect("default table is well formed")
    }

    /// Index of the band a containment level falls in.
    pub fn band_index(&self, level: f64) -> usize {
        let mut idx = 0;
        for (i, (threshold, _)) in self.bands.iter().enumerate() {
            if level >= *threshold {
                idx = i;
            }
        }
        idx
    }

    pub fn restrictions_for(&self, level: f64) -> &RestrictionSet {
        &self.bands[self.band_index(level)].1
    }
}

/// The reflexive containment formula: `c_max * (1 - trust) + c_min`.
///
/// At trust 0 this yields `c_max + c_min`, exceeding `c_max` when
/// `c_min > 0`; the formula is applied as written.
pub fn containment_level(trust: f64, policy: &ContainmentPolicy) -> Result<f64, TareError> {
    if !(0.0..=1.0).contains(&trust) {
        return Err(TareError::TrustOutOfRange(trust));
    }
    Ok(policy.c_max * (1.0 - trust) + policy.c_min)
}

/// Containment enforcement event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnforcementEvent {
    pub tick: Tick,
    pub agent: Did,
    pub trust: f64,
    pub level: f64,
    pub band: usize,
    pub restrictions: RestrictionSet,
}

/// Reflexive containment controller: re-applies restrictions whenever an
/// agent's trust moves more than the hysteresis band since the last
/// application.
#[derive(Clone, Debug)]
pub struct TareController {
    pub policy: ContainmentPolicy,
    pub hysteresis: f64,
    last_applied: BTreeMap<Did, (f64, usize)>,
}

impl TareController {
    pub fn new(policy: ContainmentPolicy, hysteresis: f64) -> Self {
        Self { policy, hysteresis, last_applied: BTreeMap::new() }
    }

    /// Look up the restrictions for a trust value without side effects.
    pub fn restrictions_for_trust(&self, trust: f64) -> Result<&RestrictionSet, TareError> {
        let level = containment_level(trust, &self.policy)?;
        Ok(self.policy.restrictions_for(level))
    }

    /// React to a trust snapshot. Returns an enforcement event when the
    /// change escapes the hysteresis band (or on first sight of the agent).
    pub fn on_trust_change(
        &mut self,
        agent: &Did,
        trust: f64,
        now: Tick,
    ) -> Result<Option<EnforcementEvent>, TareError> {
        let level = containment_level(trust, &self.policy)?;
        let band = self.policy.band_index(level);
        match self.last_applied.get(agent) {
            Some((applied_trust, applied_band))
                if (trust - applied_trust).abs() <= self.hysteresis || *applied_band == band =>
            {
                Ok(None)
            }
            _ => {
                self.last_applied.insert(agent.clone(), (trust, band));
                Ok(Some(EnforcementEvent {
                    tick: now,
                    agent: agent.clone(),
                    trust,
                    level,
                    band,
                    restrictions: self.policy.bands[band].1.clone(),
                }))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// JIT environments
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JitState {
    Provisioned,
    Active,
    Destroyed,
}

/// The six lifecycle stages, in protocol order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JitStage {
    EnvironmentRequest,
    TrustAssessment,
    EnvironmentProvisioning,
    CredentialIssuance,
    TaskExecution,
    EnvironmentDestruction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitAuditEvent {
    pub tick: Tick,
    pub stage: JitStage,
    pub agent: Did,
    pub environment_id: String,
    pub detail: String,
}

/// An ephemeral, minimally provisioned runtime with its own memory store,
/// authorized by a time-bound credential and destroyed after the task.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JitEnvironment {
    pub id: String,
    pub agent: Did,
    pub authorized_by: VerifiableCredential,
    pub resources: RestrictionSet,
    pub created_at: Tick,
    pub destroyed_at: Option<Tick>,
    pub state: JitState,
    pub memory: MemoryStore,
}

/// Configuration for JIT provisioning.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitConfig {
    /// Minimum trust to pass stage 2.
    pub trust_floor: f64,
    /// Lifetime of the authorizing credential in ticks.
    pub credential_ttl: Tick,
    pub embedding_dim: usize,
}

impl Default for JitConfig {
    fn default() -> Self {
        Self { trust_floor: 0.3, credential_ttl: 16, embedding_dim: crate::embedding::DEFAULT_DIM }
    }
}

/// Request + trust assessment + provisioning + credential issuance
/// (stages 1-4). The returned environment is active and ready for task
/// execution; destroy it with [`destroy_environment`].
#[allow(clippy::too_many_arguments)]
pub fn provision_jit(
    agent: &Did,
    task: &str,
    trust: f64,
    containment: &ContainmentPolicy,
    issuer_keys: &KeyPair,
    issuer: &Did,
    config: &JitConfig,
    now: Tick,
    sequence: u64,
) -> Result<(JitEnvironment, Vec<JitAuditEvent>), TareError> {
    let id = format!("jit-{sequence}");
    let mut events = vec![JitAuditEvent {
        tick: now,
        stage: JitStage::EnvironmentRequest,
        agent: agent.clone(),
        environment_id: id.clone(),
        detail: format!("task `{task}`"),
    }];

    // Stage 2: trust assessment.
    if trust < config.trust_floor {
        return Err(TareError::TrustBelowFloor { trust, floor: config.trust_floor });
    }
    events.push(JitAuditEvent {
        tick: now,
        stage: JitStage::TrustAssessment,
        agent: agent.clone(),
        environment_id: id.clone(),
        detail: format!("trust {trust} >= floor {}", config.trust_floor),
    });

    // Stage 3: minimal environment from the agent's current containment band.
    let level = containment_level(trust, containment)?;
    let resources = containment.restrictions_for(level).clone();
    events.push(JitAuditEvent {
        tick: now,
        stage: JitStage::EnvironmentProvisioning,
        agent: agent.clone(),
        environment_id: id.clone(),
        detail: format!("containment level {level:.4}"),
    });

    // Stage 4: time-bound authorizing credential.
    let credential = jit_credential(issuer_keys, issuer, agent, task, config.credential_ttl, now)?;
    events.push(JitAuditEvent {
        tick: now,
        stage: JitStage::CredentialIssuance,
        agent: agent.clone(),
        environment_id: id.clone(),
        detail: format!("credential {} valid {} ticks", &credential.id[..8], config.credential_ttl),
    });

    let env = JitEnvironment {
        id,
        agent: agent.clone(),
        authorized_by: credential,
        resources,
        created_at: now,
        destroyed_at: None,
        state: JitState::Active,
        memory: MemoryStore::new(agent.clone(), config.embedding_dim),
    };
    Ok((env, events))
}

/// Stage 5 bookkeeping: confirm the environment may still execute at `now`.
/// Expired credentials abort the task (the caller should destroy).
pub fn check_task_execution(
    env: &JitEnvironment,
    issuer_public_key: &[u8],
    now: Tick,
) -> Result<JitAuditEvent, TareError> {
    if env.state != JitState::Active {
        return Err(TareError::NotActive);
    }
    let status = verify_credential(
        &env.authorized_by,
        issuer_public_key,
        now,
        &Default::default(),
    );
    if status != CredentialStatus::Accept {
        return Err(TareError::CredentialInvalid(status));
    }
    Ok(JitAuditEvent {
        tick: now,
        stage: JitStage::TaskExecution,
        agent: env.agent.clone(),
        environment_id: env.id.clone(),
        detail: "task executing".into(),
    })
}

/// Stage 6: erase the environment's memory, expire its credential and mark
/// it destroyed. Nothing planted inside survives.
pub fn destroy_environment(env: &mut JitEnvironment, now: Tick) -> JitAuditEvent {
    env.memory.short_term.clear();
    env.memory.long_term.clear();
    env.memory.quarantine.clear();
    env.memory.chain_head = crate::memory::genesis_hash();
    env.memory.session_snapshots.clear();
    env.authorized_by.revoked = true;
    if env.authorized_by.not_after >= now {
        env.authorized_by.not_after = now.saturating_sub(1);
    }
    env.state = JitState::Destroyed;
    env.destroyed_at = Some(now);
    JitAuditEvent {
        tick: now,
        stage: JitStage::EnvironmentDestruction,
        agent: env.agent.clone(),
        environment_id: env.id.clone(),
        detail: "environment and all data destroyed".into(),
    }
}
