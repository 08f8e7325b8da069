//! Dynamic trust computation: component scores, weighted composite,
//! sliding-window behavior, exponential decay, reputation aggregation and
//! convergent step updates.
//!
//! The composite is `alpha*B + beta*R + gamma*H + delta_w*C` where B is the
//! windowed behavioral mean, R the recency-weighted reputation, H an
//! exponentially weighted history of past composites, and C the windowed
//! compliance fraction. Decay applies to the composite between updates;
//! components are recomputed at update time. Under a stationary event
//! stream the update is a contraction, so composites converge.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{self, CanonicalBytes};
use crate::identity::Did;
use crate::Tick;

#[derive(Debug, Error, PartialEq)]
pub enum TrustError {
    #[error("trust weights must be in [0,1] and sum to 1 (sum was {0})")]
    BadWeights(f64),
    #[error("decay parameters must be non-negative")]
    NegativeDecay,
    #[error("step time {now} precedes last update {last}")]
    TimeRegression { now: Tick, last: Tick },
}

/// Weighting factors for the four composite components. The fourth is
/// named `delta_w` because the attack model already uses delta for damage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta_w: f64,
}

impl TrustWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta_w: f64) -> Result<Self, TrustError> {
        let sum = alpha + beta + gamma + delta_w;
        let each_ok = [alpha, beta, gamma, delta_w]
            .iter()
            .all(|w| (0.0..=1.0).contains(w));
        if !each_ok || (sum - 1.0).abs() > 1e-9 {
            return Err(TrustError::BadWeights(sum));
        }
        Ok(Self { alpha, beta, gamma, delta_w })
    }
}

impl Default for TrustWeights {
    fn default() -> Self {
        Self { alpha: 0.4, beta: 0.2, gamma: 0.2, delta_w: 0.2 }
    }
}

/// Tunables shared by every agent's trust state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustConfig {
    /// Neutral prior for agents with no evidence.
    pub bootstrap: f64,
    /// Behavioral window capacity.
    pub window: usize,
    /// Decay constant per tick.
    pub decay_lambda: f64,
    /// Reputation recency half-life in ticks.
    pub reputation_half_life: Tick,
}

impl Default for TrustConfig {
    fn default() -> Self {
        Self { bootstrap: 0.5, window: 20, decay_lambda: 0.01, reputation_half_life: 50 }
    }
}

/// One observed action compared against the expected behavior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSample {
    pub action: String,
    pub expected: String,
    pub similarity: f64,
    pub compliant: bool,
}

/// A signed peer assessment of another agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReputationReport {
    pub reporter: Did,
    pub subject: Did,
    pub score: f64,
    pub tick: Tick,
    pub signature: Vec<u8>,
}

impl ReputationReport {
    pub fn signing_bytes(&self) -> Vec<u8> {
        CanonicalBytes::new("reputation")
            .text(&self.reporter.to_string())
            .text(&self.subject.to_string())
            .f64(self.score)
            .u64(self.tick)
            .finish()
    }

    pub fn signed(
        reporter_keys: &crate::crypto::KeyPair,
        reporter: &Did,
        subject: &Did,
        score: f64,
        tick: Tick,
    ) -> Self {
        let mut r = Self {
            reporter: reporter.clone(),
            subject: subject.clone(),
            score,
            tick,
            signature: Vec::new(),
        };
        r.signature = crypto::sign(&reporter_keys.private_key, &r.signing_bytes());
        r
    }
}

/// Events folded into a trust step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrustEvent {
    Action(ActionSample),
    Reputation(ReputationReport),
    /// Suggested composite adjustment from causal-audit rescoring.
    AuditDelta(f64),
}

/// Per-agent trust state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustState {
    pub agent: Did,
    pub behavioral: f64,
    pub reputation: f64,
    pub historical: f64,
    pub compliance: f64,
    pub composite: f64,
    pub last_update: Tick,
    pub action_window: VecDeque<ActionSample>,
    pub reports: Vec<ReputationReport>,
}

impl TrustState {
    pub fn new(agent: Did, config: &TrustConfig) -> Self {
        let b = config.bootstrap;
        Self {
            agent,
            behavioral: b,
            reputation: b,
            historical: b,
            compliance: b,
            composite: b,
            last_update: 0,
            action_window: VecDeque::new(),
            reports: Vec::new(),
        }
    }
}

/// Mean similarity over the behavioral window; bootstrap when empty.
pub fn behavioral_score(window: &VecDeque<ActionSample>, bootstrap: f64) -> f64 {
    if window.is_empty() {
        bootstrap
    } else {
        window.iter().map(|s| s.similarity).sum::<f64>() / window.len() as f64
    }
}

/// Exact weighted composite of the four components.
pub fn composite_trust(state: &TrustState, weights: &TrustWeights) -> f64 {
    weights.alpha * state.behavioral
        + weights.beta * state.reputation
        + weights.gamma * state.historical
        + weights.delta_w * state.compliance
}

/// Exponential decay: `score * e^(-lambda * dt)`.
pub fn decay(score: f64, lambda: f64, dt: Tick) -> Result<f64, TrustError> {
    if lambda < 0.0 {
        return Err(TrustError::NegativeDecay);
    }
    Ok(score * (-lambda * dt as f64).exp())
}

/// Recency-weighted mean of verifiable reports: weight `2^(-age/half_life)`.
/// Reports failing signature verification are dropped; the second return
/// value counts them. No usable reports yields the bootstrap value.
pub fn aggregate_reputation(
    reports: &[ReputationReport],
    now: Tick,
    half_life: Tick,
    reporter_keys: &BTreeMap<Did, Vec<u8>>,
    bootstrap: f64,
) -> (f64, usize) {
    let mut weighted_sum = 0.0;
    let mut weight_total = 0.0;
    let mut dropped = 0;
    for report in reports {
        let verified = reporter_keys
            .get(&report.reporter)
            .is_some_and(|pk| crypto::verify(pk, &report.signing_bytes(), &report.signature));
        if !verified || !(0.0..=1.0).contains(&report.score) || report.tick > now {
            dropped += 1;
            continue;
        }
        let age = (now - report.tick) as f64;
        let weight = 0.5f64.powf(age / half_life as f64);
        weighted_sum += weight * report.score;
        weight_total += weight;
    }
    if weight_total == 0.0 {
        (bootstrap, dropped)
    } else {
        (weighted_sum / weight_total, dropped)
    }
}

/// Advance a trust state to `now`, folding in events.
///
/// With no events the composite simply decays. With events, the behavioral
/// window absorbs new samples, components are recomputed (history is an
/// EWMA of decayed past composites with smoothing `1 - e^(-lambda)`), and
/// audit deltas adjust the final composite, clamped to `[0, 1]`.
pub fn step(
    state: &TrustState,
    weights: &TrustWeights,
    config: &TrustConfig,
    now: Tick,
    events: &[TrustEvent],
    reporter_keys: &BTreeMap<Did, Vec<u8>>,
) -> Result<TrustState, TrustError> {
    if now < state.last_update {
        return Err(TrustError::TimeRegression { now, last: state.last_update });
    }
    let dt = now - state.last_update;
    let decayed = decay(state.composite, config.decay_lambda, dt)?;

    let mut next = state.clone();
    next.last_update = now;

    if events.is_empty() {
        next.composite = decayed;
        return Ok(next);
    }

    let mut audit_delta = 0.0;
    for event in events {
        match event {
            TrustEvent::Action(sample) => {
                next.action_window.push_back(sample.clone());
                while next.action_window.len() > config.window {
                    next.action_window.pop_front();
                }
            }
            TrustEvent::Reputation(report) => next.reports.push(report.clone()),
            TrustEvent::AuditDelta(delta) => audit_delta += delta,
        }
    }
    // Bound the report backlog; old reports carry negligible weight anyway.
    let horizon = now.saturating_sub(config.reputation_half_life.saturating_mul(10));
    next.reports.retain(|r| r.tick >= horizon);

    next.behavioral = behavioral_score(&next.action_window, config.bootstrap);
    let (rep, _) = aggregate_reputation(
        &next.reports,
        now,
        config.reputation_half_life,
        reporter_keys,
        config.bootstrap,
    );
    next.reputation = rep;
    let smoothing = 1.0 - (-config.decay_lambda).exp();
    next.historical = (1.0 - smoothing) * state.historical + smoothing * decayed;
    next.compliance = if next.action_window.is_empty() {
        config.bootstrap
    } else {
        next.action_window.iter().filter(|s| s.compliant).count() as f64
            / next.action_window.len() as f64
    };
    next.composite = (composite_trust(&next, weights) + audit_delta).clamp(0.0, 1.0);
    Ok(next)
}
