//! # trustfabric-core
//!
//! Security primitives for a deterministic multi-agent zero-trust fabric:
//!
//! - [`identity`]: DIDs, key pairs, verifiable credentials, challenge-response
//!   authentication and delegation chains
//! - [`memory`]: hash-chained agent memory with integrity verification,
//!   quarantine and similarity-based retrieval
//! - [`ans`]: hierarchical agent naming, PKI-backed registration, capability
//!   discovery and federated revocation
//! - [`policy`]: the access-control DSL parser and three-phase authorization
//!   pipeline
//! - [`trust`]: composite trust scoring with behavioral windows, reputation
//!   aggregation and exponential decay
//! - [`lpci`]: the executable logic-layer prompt-control-injection attack
//!   model (payload, trigger, lifecycle FSM, layered-defense bound)
//! - [`tare`]: trust-adaptive containment and ephemeral just-in-time
//!   environments
//! - [`audit`]: DID-anchored causal provenance graphs, rule-based anomaly
//!   detectors and federated telemetry
//! - [`attest`]: behavioral fingerprints, deviation scoring and multi-factor
//!   attestation
//!
//! Everything is deterministic under a seed: randomness flows through
//! [`rng::DetRng`] streams derived from `(seed, site label, trial)` and the
//! default signature scheme is a keyed hash, so simulations replay
//! bit-identically.

pub mod ans;
pub mod attest;
pub mod audit;
pub mod crypto;
pub mod embedding;
pub mod identity;
pub mod lpci;
pub mod memory;
pub mod policy;
pub mod rng;
pub mod tare;
pub mod trust;

/// Simulation time. All clocks in the fabric are integer ticks.
pub type Tick = u64;
