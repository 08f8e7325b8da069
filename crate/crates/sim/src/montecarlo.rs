//! Monte Carlo validation of the layered-defense bound.
//!
//! Each trial walks one attack through the lifecycle FSM with per-phase
//! probability `epsilon^(1/5)` (so the undefended product is exactly
//! `epsilon`) and one independent detection roll per abstract defense
//! layer, assigned round-robin to the five probabilistic crossings. The
//! empirical success rate is compared against
//! `epsilon * prod(1 - detection_i)` at three standard errors.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use trustfabric_core::embedding::DEFAULT_DIM;
use trustfabric_core::identity::generate_did;
use trustfabric_core::lpci::{
    layered_defense_bound, tick_fsm, AttackContext, AttackPhase, AttackState, DamageKind, DamageProfile,
    DefenseLayer, InjectionChannel, LpciError, LpciPayload, PayloadEncoding, PhaseProbabilities,
    TriggerKind, TriggerSpec,
};
use trustfabric_core::memory::MemoryStore;
use trustfabric_core::rng::DetRng;

#[derive(Debug, Error, PartialEq)]
pub enum ExperimentError {
    #[error("trials must be at least 1")]
    ZeroTrials,
    #[error(transparent)]
    Lpci(#[from] LpciError),
}

/// Outcome of one Monte Carlo experiment cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloOutcome {
    pub trials: u64,
    pub successes: u64,
    pub rate: f64,
    pub stderr: f64,
    /// 99% confidence interval (normal approximation), clamped to `[0, 1]`.
    pub ci99: (f64, f64),
    pub epsilon: f64,
    pub detections: Vec<f64>,
    pub bound: f64,
    /// `rate <= bound + 3 * stderr`.
    pub within_bound: bool,
}

fn experiment_payload() -> LpciPayload {
    LpciPayload {
        payload_text: "noop directive".into(),
        encoding: PayloadEncoding::None,
        trigger: TriggerSpec { kind: TriggerKind::TimeDelayed { delay: 0 }, one_shot: false },
        stealth: 1.0,
        damage: DamageProfile { kind: DamageKind::UnauthorizedToolCall, magnitude: 1.0, tool_call: None },
        channel: InjectionChannel::DirectInput,
        disguise_label: "note".into(),
    }
}

/// Walk one attack to a terminal state; true on full lifecycle completion.
fn one_trial(
    probs: &PhaseProbabilities,
    layers: &[DefenseLayer],
    payload: &LpciPayload,
    rng: &mut DetRng,
    victim: &trustfabric_core::identity::Did,
) -> bool {
    let mut store = MemoryStore::new(victim.clone(), DEFAULT_DIM);
    let mut attack = AttackState::new(0);
    let empty = BTreeSet::new();
    for now in 0..8 {
        let ctx = AttackContext {
            probs,
            layers,
            context_events: &empty,
            pending_query: None,
            audit_tamper_proof: false,
            source_trust: 0.5,
            now,
        };
        let (next, _) = tick_fsm(&attack, payload, &mut store, &ctx, rng);
        attack = next;
        if attack.phase.is_terminal() {
            break;
        }
    }
    attack.phase == AttackPhase::Complete
}

/// Run `trials` independent attack replicas against abstract defense layers
/// and compare the success rate with the layered-defense bound.
pub fn monte_carlo(
    seed: u64,
    trials: u64,
    epsilon: f64,
    detections: &[f64],
) -> Result<MonteCarloOutcome, ExperimentError> {
    if trials == 0 {
        return Err(ExperimentError::ZeroTrials);
    }
    let bound = layered_defense_bound(epsilon, detections)?;
    // Spread the base rate evenly over the five probabilistic crossings.
    let per_phase = epsilon.powf(0.2);
    let probs = PhaseProbabilities {
        inject: per_phase,
        persist: per_phase,
        trigger: per_phase,
        execute: per_phase,
        evade: per_phase,
    };
    probs.validate()?;
    let layers: Vec<DefenseLayer> = detections
        .iter()
        .enumerate()
        .map(|(k, &d)| DefenseLayer {
            name: format!("layer{k}"),
            detection: d,
            crossing: k % 5,
        })
        .collect();
    let payload = experiment_payload();
    let victim = generate_did(&mut DetRng::for_site(seed, "mc-victim", 0), 128).expect("128 valid");

    let mut successes = 0u64;
    for trial in 0..trials {
        let mut rng = DetRng::for_site(seed, "mc-trial", trial);
        if one_trial(&probs, &layers, &payload, &mut rng, &victim) {
            successes += 1;
        }
    }
    let rate = successes as f64 / trials as f64;
    let stderr = (rate * (1.0 - rate) / trials as f64).sqrt();
    let half = 2.5758 * stderr;
    Ok(MonteCarloOutcome {
        trials,
        successes,
        rate,
        stderr,
        ci99: ((rate - half).max(0.0), (rate + half).min(1.0)),
        epsilon,
        detections: detections.to_vec(),
        bound,
        within_bound: rate <= bound + 3.0 * stderr,
    })
}

/// The 3x3 grid experiment: epsilon in {0.2, 0.5, 0.8} crossed with 1..=3
/// layers at detection 0.9.
pub fn defense_grid(seed: u64, trials: u64) -> Result<Vec<MonteCarloOutcome>, ExperimentError> {
    let mut out = Vec::new();
    for &epsilon in &[0.2, 0.5, 0.8] {
        for k in 1..=3usize {
            let detections = vec![0.9; k];
            out.push(monte_carlo(seed, trials, epsilon, &detections)?);
        }
    }
    Ok(out)
}
