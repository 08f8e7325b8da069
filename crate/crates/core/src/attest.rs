//! Behavioral fingerprints, deviation detection and continuous multi-factor
//! attestation.
//!
//! A fingerprint concatenates four feature blocks (decision patterns,
//! interaction style, resource usage, temporal patterns) into a 24-dim
//! vector, maintained as an exponential moving average of observations.
//! Deviation is the Euclidean distance from the enrolled baseline; crossing
//! the threshold escalates to three verification factors: a fresh
//! cryptographic challenge, a guardian co-signature, and a memory
//! integrity check.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{self, CanonicalBytes};
use crate::identity::{answer_challenge, verify_challenge, AgentIdentity, Did, NONCE_LEN};
use crate::memory::{IntegrityStatus, MemoryStore};
use crate::rng::DetRng;
use crate::Tick;

/// decision(8) + interaction(8) + resource(4) + temporal(4)
pub const FINGERPRINT_DIM: usize = 24;

#[derive(Debug, Error, PartialEq)]
pub enum AttestError {
    #[error("observation must have {FINGERPRINT_DIM} finite components")]
    BadObservation,
    #[error("ema factor must lie in (0, 1]")]
    BadEmaFactor(f64),
    #[error("deviation threshold must be positive")]
    BadThreshold(f64),
}

/// The 24-dimensional behavioral fingerprint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehavioralFingerprint {
    pub decision_patterns: [f64; 8],
    pub interaction_style: [f64; 8],
    pub resource_usage: [f64; 4],
    pub temporal_patterns: [f64; 4],
}

impl BehavioralFingerprint {
    pub fn zeros() -> Self {
        Self {
            decision_patterns: [0.0; 8],
            interaction_style: [0.0; 8],
            resource_usage: [0.0; 4],
            temporal_patterns: [0.0; 4],
        }
    }

    pub fn from_vec(v: &[f64; FINGERPRINT_DIM]) -> Self {
        let mut fp = Self::zeros();
        fp.decision_patterns.copy_from_slice(&v[0..8]);
        fp.interaction_style.copy_from_slice(&v[8..16]);
        fp.resource_usage.copy_from_slice(&v[16..20]);
        fp.temporal_patterns.copy_from_slice(&v[20..24]);
        fp
    }

    pub fn as_vec(&self) -> [f64; FINGERPRINT_DIM] {
        let mut v = [0.0; FINGERPRINT_DIM];
        v[0..8].copy_from_slice(&self.decision_patterns);
        v[8..16].copy_from_slice(&self.interaction_style);
        v[16..20].copy_from_slice(&self.resource_usage);
        v[20..24].copy_from_slice(&self.temporal_patterns);
        v
    }
}

/// Per-agent attestation state: enrolled baseline, EMA-tracked current
/// fingerprint, and thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttestationState {
    pub baseline: BehavioralFingerprint,
    pub current: BehavioralFingerprint,
    pub deviation_threshold: f64,
    pub ema_factor: f64,
    /// Probability of a spot challenge even when deviation is in bounds.
    pub periodic_challenge_p: f64,
}

impl AttestationState {
    pub fn new(
        baseline: BehavioralFingerprint,
        deviation_threshold: f64,
        ema_factor: f64,
    ) -> Result<Self, AttestError> {
        if !(ema_factor > 0.0 && ema_factor <= 1.0) {
            return Err(AttestError::BadEmaFactor(ema_factor));
        }
        if deviation_threshold <= 0.0 {
            return Err(AttestError::BadThreshold(deviation_threshold));
        }
        Ok(Self {
            current: baseline.clone(),
            baseline,
            deviation_threshold,
            ema_factor,
            periodic_challenge_p: 0.05,
        })
    }

    pub fn with_defaults(baseline: BehavioralFingerprint) -> Self {
        Self::new(baseline, 0.35, 0.1).expect("defaults are valid")
    }
}

/// Fold an observation into the current fingerprint:
/// `current <- (1 - ema) * current + ema * observation`.
pub fn update_fingerprint(
    state: &mut AttestationState,
    observation: &[f64; FINGERPRINT_DIM],
) -> Result<(), AttestError> {
    if observation.iter().any(|x| !x.is_finite()) {
        return Err(AttestError::BadObservation);
    }
    let ema = state.ema_factor;
    let mut v = state.current.as_vec();
    for (c, o) in v.iter_mut().zip(observation) {
        *c = (1.0 - ema) * *c + ema * o;
    }
    state.current = BehavioralFingerprint::from_vec(&v);
    Ok(())
}

/// Euclidean distance between the current fingerprint and the baseline.
pub fn deviation(state: &AttestationState) -> f64 {
    fingerprint_distance(&state.current, &state.baseline)
}

pub fn fingerprint_distance(a: &BehavioralFingerprint, b: &BehavioralFingerprint) -> f64 {
    a.as_vec()
        .iter()
        .zip(b.as_vec().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Escalation factors for out-of-band verification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    ChallengeResponse,
    CoSignature,
    MemoryIntegrity,
}

/// Guardian approval of an escalation: a second authorized DID signs
/// `(agent, tick)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoSignature {
    pub approver: Did,
    pub tick: Tick,
    pub signature: Vec<u8>,
}

impl CoSignature {
    fn signing_bytes(agent: &Did, tick: Tick) -> Vec<u8> {
        CanonicalBytes::new("co-signature")
            .text(&agent.to_string())
            .u64(tick)
            .finish()
    }

    pub fn sign(approver_keys: &crypto::KeyPair, approver: &Did, agent: &Did, tick: Tick) -> Self {
        Self {
            approver: approver.clone(),
            tick,
            signature: crypto::sign(&approver_keys.private_key, &Self::signing_bytes(agent, tick)),
        }
    }

    pub fn verify(&self, agent: &Did, approver_public_key: &[u8]) -> bool {
        crypto::verify(
            approver_public_key,
            &Self::signing_bytes(agent, self.tick),
            &self.signature,
        )
    }
}

/// Evidence the agent supplies when escalated.
pub struct EscalationEvidence<'a> {
    pub co_signature: Option<&'a CoSignature>,
    pub memory: &'a MemoryStore,
}

/// Attestation outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttestOutcome {
    /// In-bounds deviation; `challenged` marks a passed spot challenge,
    /// `escalated` a pass that went through full escalation.
    Pass { challenged: bool, escalated: bool },
    /// Deviation exceeded the threshold and no evidence was supplied.
    Escalate(Vec<Factor>),
    Fail(Factor),
}

/// Identity-side context for verification: the key registered for the DID
/// (which a compromised agent may no longer match) and the guardian key.
pub struct AttestContext<'a> {
    pub registered_key: &'a [u8],
    pub guardian: &'a Did,
    pub guardian_key: &'a [u8],
    pub now: Tick,
}

fn run_challenge(identity: &AgentIdentity, ctx: &AttestContext, rng: &mut DetRng) -> bool {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    match answer_challenge(identity, &nonce, ctx.now) {
        Ok(response) => verify_challenge(&response, &nonce, ctx.registered_key),
        Err(_) => false,
    }
}

/// Continuous attestation. In-bounds deviation passes, with a periodic
/// random spot challenge. Over-threshold deviation requires all three
/// factors; the first failing factor is named.
pub fn attest(
    state: &AttestationState,
    identity: &AgentIdentity,
    ctx: &AttestContext,
    evidence: Option<&EscalationEvidence>,
    rng: &mut DetRng,
) -> AttestOutcome {
    let dev = deviation(state);
    if dev <= state.deviation_threshold {
        if rng.chance(state.periodic_challenge_p) {
            if run_challenge(identity, ctx, rng) {
                return AttestOutcome::Pass { challenged: true, escalated: false };
            }
            return AttestOutcome::Fail(Factor::ChallengeResponse);
        }
        return AttestOutcome::Pass { challenged: false, escalated: false };
    }

    let required = vec![Factor::ChallengeResponse, Factor::CoSignature, Factor::MemoryIntegrity];
    let Some(evidence) = evidence else {
        return AttestOutcome::Escalate(required);
    };
    if !run_challenge(identity, ctx, rng) {
        return AttestOutcome::Fail(Factor::ChallengeResponse);
    }
    let co_ok = evidence
        .co_signature
        .is_some_and(|cs| cs.approver == *ctx.guardian && cs.verify(&identity.did, ctx.guardian_key));
    if !co_ok {
        return AttestOutcome::Fail(Factor::CoSignature);
    }
    if evidence.memory.verify_integrity() != IntegrityStatus::Ok {
        return AttestOutcome::Fail(Factor::MemoryIntegrity);
    }
    AttestOutcome::Pass { challenged: true, escalated: true }
}

/// Closed-form bound on updates needed for a sustained behavioral shift of
/// magnitude `shift` to push the EMA past `threshold`:
/// `N = ceil(ln(1 - threshold/shift) / ln(1 - ema))`.
pub fn detection_horizon(threshold: f64, shift: f64, ema: f64) -> Option<u64> {
    if shift <= threshold {
        return None; // shift never crosses
    }
    let n = (1.0 - threshold / shift).ln() / (1.0 - ema).ln();
    Some(n.ceil() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::generate_keypair;
    use crate::embedding::DEFAULT_DIM;
    use crate::identity::generate_did;
    use crate::memory::{MemorySource, Tier};

    fn obs(value: f64) -> [f64; FINGERPRINT_DIM] {
        [value; FINGERPRINT_DIM]
    }

    #[test]
    fn ema_one_replaces_current() {
        let mut state = AttestationState::new(BehavioralFingerprint::zeros(), 0.35, 1.0).unwrap();
        update_fingerprint(&mut state, &obs(0.7)).unwrap();
        assert_eq!(state.current.as_vec(), obs(0.7));
    }

    #[test]
    fn constant_observations_converge() {
        let mut state = AttestationState::with_defaults(BehavioralFingerprint::zeros());
        for _ in 0..500 {
            update_fingerprint(&mut state, &obs(0.9)).unwrap();
        }
        for c in state.current.as_vec() {
            assert!((c - 0.9).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_ema_rejected() {
        assert_eq!(
            AttestationState::new(BehavioralFingerprint::zeros(), 0.35, 0.0).unwrap_err(),
            AttestError::BadEmaFactor(0.0)
        );
    }

    #[test]
    fn nan_observations_rejected() {
        let mut state = AttestationState::with_defaults(BehavioralFingerprint::zeros());
        let mut bad = obs(0.5);
        bad[3] = f64::NAN;
        assert_eq!(update_fingerprint(&mut state, &bad).unwrap_err(), AttestError::BadObservation);
    }

    #[test]
    fn deviation_hand_values() {
        let mut state = AttestationState::with_defaults(BehavioralFingerprint::zeros());
        assert_eq!(deviation(&state), 0.0);

        let mut v = [0.0; FINGERPRINT_DIM];
        v[5] = 0.5;
        state.current = BehavioralFingerprint::from_vec(&v);
        assert!((deviation(&state) - 0.5).abs() < 1e-12);

        state.current = BehavioralFingerprint::from_vec(&obs(0.1));
        let expected = (24.0f64 * 0.01).sqrt();
        assert!((deviation(&state) - expected).abs() < 1e-12);
        assert!((deviation(&state) - 0.4899).abs() < 1e-4);
    }

    #[test]
    fn deviation_is_a_metric() {
        let mut rng = DetRng::for_site(14, "metric", 0);
        for _ in 0..200 {
            let mut a = [0.0; FINGERPRINT_DIM];
            let mut b = [0.0; FINGERPRINT_DIM];
            let mut c = [0.0; FINGERPRINT_DIM];
            for i in 0..FINGERPRINT_DIM {
                a[i] = rng.next_f64();
                b[i] = rng.next_f64();
                c[i] = rng.next_f64();
            }
            let (fa, fb, fc) = (
                BehavioralFingerprint::from_vec(&a),
                BehavioralFingerprint::from_vec(&b),
                BehavioralFingerprint::from_vec(&c),
            );
            let (dab, dba) = (fingerprint_distance(&fa, &fb), fingerprint_distance(&fb, &fa));
            assert!((dab - dba).abs() < 1e-12, "symmetry");
            let (dac, dcb) = (fingerprint_distance(&fa, &fc), fingerprint_distance(&fc, &fb));
            assert!(dab <= dac + dcb + 1e-12, "triangle inequality");
        }
    }

    struct Rig {
        identity: AgentIdentity,
        registered_key: Vec<u8>,
        guardian: Did,
        guardian_keys: crypto::KeyPair,
        memory: MemoryStore,
    }

    fn rig(label: &str) -> Rig {
        let keys = generate_keypair(&mut DetRng::for_site(14, label, 0));
        let did = generate_did(&mut DetRng::for_site(14, label, 1), 128).unwrap();
        let guardian_keys = generate_keypair(&mut DetRng::for_site(14, label, 2));
        let guardian = generate_did(&mut DetRng::for_site(14, label, 3), 128).unwrap();
        let memory = MemoryStore::new(did.clone(), DEFAULT_DIM);
        Rig {
            identity: AgentIdentity::new(did, keys.clone()),
            registered_key: keys.public_key,
            guardian,
            guardian_keys,
            memory,
        }
    }

    #[test]
    fn in_bounds_deviation_passes() {
        let r = rig("calm");
        let state = AttestationState::with_defaults(BehavioralFingerprint::zeros());
        let ctx = AttestContext {
            registered_key: &r.registered_key,
            guardian: &r.guardian,
            guardian_key: &r.guardian_keys.public_key,
            now: 5,
        };
        let mut rng = DetRng::for_site(14, "pass", 0);
        let outcome = attest(&state, &r.identity, &ctx, None, &mut rng);
        assert!(matches!(outcome, AttestOutcome::Pass { escalated: false, .. }));
    }

    fn shifted_state() -> AttestationState {
        let mut state = AttestationState::with_defaults(BehavioralFingerprint::zeros());
        state.current = BehavioralFingerprint::from_vec(&obs(0.5 / (24f64).sqrt() * 2.4));
        assert!(deviation(&state) > state.deviation_threshold);
        state
    }

    #[test]
    fn over_threshold_escalates_then_passes_with_evidence() {
        let r = rig("shifted");
        let state = shifted_state();
        let ctx = AttestContext {
            registered_key: &r.registered_key,
            guardian: &r.guardian,
            guardian_key: &r.guardian_keys.public_key,
            now: 5,
        };
        let mut rng = DetRng::for_site(14, "escalate", 0);
        let outcome = attest(&state, &r.identity, &ctx, None, &mut rng);
        assert_eq!(
            outcome,
            AttestOutcome::Escalate(vec![
                Factor::ChallengeResponse,
                Factor::CoSignature,
                Factor::MemoryIntegrity
            ])
        );

        let co = CoSignature::sign(&r.guardian_keys, &r.guardian, &r.identity.did, 5);
        let evidence = EscalationEvidence { co_signature: Some(&co), memory: &r.memory };
        let outcome = attest(&state, &r.identity, &ctx, Some(&evidence), &mut rng);
        assert_eq!(outcome, AttestOutcome::Pass { challenged: true, escalated: true });
    }

    #[test]
    fn tampered_memory_fails_escalation() {
        let r = rig("tampered");
        let state = shifted_state();
        let mut memory = r.memory.clone();
        for i in 0..4 {
            memory
                .append(
                    format!("m{i}"),
                    MemorySource::External("notes".into()),
                    0.5,
                    vec![0.0; DEFAULT_DIM],
                    Tier::LongTerm,
                    i,
                )
                .unwrap();
        }
        memory.long_term[1].content = "rewritten".into();

        let ctx = AttestContext {
            registered_key: &r.registered_key,
            guardian: &r.guardian,
            guardian_key: &r.guardian_keys.public_key,
            now: 9,
        };
        let co = CoSignature::sign(&r.guardian_keys, &r.guardian, &r.identity.did, 9);
        let evidence = EscalationEvidence { co_signature: Some(&co), memory: &memory };
        let mut rng = DetRng::for_site(14, "tamper", 0);
        let outcome = attest(&state, &r.identity, &ctx, Some(&evidence), &mut rng);
        assert_eq!(outcome, AttestOutcome::Fail(Factor::MemoryIntegrity));
    }

    #[test]
    fn wrong_key_fails_challenge_factor() {
        let r = rig("imposter");
        let state = shifted_state();
        // Registered key belongs to someone else entirely.
        let other = generate_keypair(&mut DetRng::for_site(14, "other", 0));
        let ctx = AttestContext {
            registered_key: &other.public_key,
            guardian: &r.guardian,
            guardian_key: &r.guardian_keys.public_key,
            now: 5,
        };
        let co = CoSignature::sign(&r.guardian_keys, &r.guardian, &r.identity.did, 5);
        let evidence = EscalationEvidence { co_signature: Some(&co), memory: &r.memory };
        let mut rng = DetRng::for_site(14, "imposter", 0);
        let outcome = attest(&state, &r.identity, &ctx, Some(&evidence), &mut rng);
        assert_eq!(outcome, AttestOutcome::Fail(Factor::ChallengeResponse));
    }

    #[test]
    fn missing_cosignature_fails() {
        let r = rig("unapproved");
        let state = shifted_state();
        let ctx = AttestContext {
            registered_key: &r.registered_key,
            guardian: &r.guardian,
            guardian_key: &r.guardian_keys.public_key,
            now: 5,
        };
        let evidence = EscalationEvidence { co_signature: None, memory: &r.memory };
        let mut rng = DetRng::for_site(14, "nocosign", 0);
        let outcome = attest(&state, &r.identity, &ctx, Some(&evidence), &mut rng);
        assert_eq!(outcome, AttestOutcome::Fail(Factor::CoSignature));
    }

    #[test]
    fn escalation_monotone_in_deviation() {
        let base = AttestationState::with_defaults(BehavioralFingerprint::zeros());
        let mut previous_escalated = false;
        for i in 0..50 {
            let magnitude = i as f64 * 0.02;
            let mut state = base.clone();
            state.current = BehavioralFingerprint::from_vec(&obs(magnitude / (24f64).sqrt()));
            let escalated = deviation(&state) > state.deviation_threshold;
            assert!(
                !previous_escalated || escalated,
                "escalation must be monotone in deviation"
            );
            previous_escalated = escalated;
        }
        assert!(previous_escalated);
    }

    #[test]
    fn detection_horizon_closed_form_matches_simulation() {
        let threshold = 0.35;
        let ema = 0.1;
        let shift_magnitude = 0.8; // L2 magnitude of the behavior change
        let n = detection_horizon(threshold, shift_magnitude, ema).unwrap();

        let mut state = AttestationState::with_defaults(BehavioralFingerprint::zeros());
        let shifted = obs(shift_magnitude / (24f64).sqrt());
        let mut crossed_at = None;
        for k in 1..=200 {
            update_fingerprint(&mut state, &shifted).unwrap();
            if deviation(&state) > threshold {
                crossed_at = Some(k);
                break;
            }
        }
        assert_eq!(crossed_at, Some(n));
        // A shift below the threshold never crosses.
        assert_eq!(detection_horizon(0.35, 0.2, 0.1), None);
    }
}
