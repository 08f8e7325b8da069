//! Verifiable agent identity: DIDs, credentials, challenge-response
//! authentication and delegation chains.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{self, CanonicalBytes, KeyPair};
use crate::rng::DetRng;
use crate::Tick;

/// Length in bytes of a challenge nonce.
pub const NONCE_LEN: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdentityError {
    #[error("entropy_bits must be 128 or 256, got {0}")]
    InvalidEntropyBits(u32),
    #[error("did text `{text}` is malformed: {reason}")]
    MalformedDid { text: String, reason: String },
    #[error("a credential must attest at least one claim")]
    EmptyClaims,
    #[error("credential validity window is empty ({not_before} > {not_after})")]
    EmptyValidity { not_before: Tick, not_after: Tick },
    #[error("challenge nonce must be {NONCE_LEN} bytes, got {0}")]
    BadNonceLength(usize),
    #[error("delegation chain is empty")]
    EmptyChain,
    #[error("delegation chain broken between links {0} and {1}: delegatee/delegator mismatch")]
    ChainDiscontinuity(usize, usize),
    #[error("no registered public key for {0}")]
    UnknownKey(Did),
}

/// Decentralized identifier: `did:<method>:<lowercase hex id>`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Did {
    method: String,
    id_bytes: Vec<u8>,
}

impl Did {
    pub fn new(method: impl Into<String>, id_bytes: Vec<u8>) -> Self {
        Self {
            method: method.into(),
            id_bytes,
        }
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn id_bytes(&self) -> &[u8] {
        &self.id_bytes
    }

    /// Parse the text form. Inverse of `Display`.
    pub fn parse(text: &str) -> Result<Self, IdentityError> {
        let malformed = |reason: &str| IdentityError::MalformedDid {
            text: text.to_string(),
            reason: reason.to_string(),
        };
        let rest = text.strip_prefix("did:").ok_or_else(|| malformed("missing `did:` prefix"))?;
        let (method, hex_id) = rest
            .split_once(':')
            .ok_or_else(|| malformed("missing method separator"))?;
        if method.is_empty() || !method.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit()) {
            return Err(malformed("method must be non-empty lowercase ASCII"));
        }
        let id_bytes = hex::decode(hex_id).map_err(|_| malformed("id is not valid hex"))?;
        if id_bytes.is_empty() {
            return Err(malformed("empty id"));
        }
        Ok(Self::new(method, id_bytes))
    }

    fn canonical(&self) -> Vec<u8> {
        CanonicalBytes::new("did")
            .text(&self.method)
            .field(&self.id_bytes)
            .finish()
    }
}

impl fmt::Display for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "did:{}:{}", self.method, hex::encode(&self.id_bytes))
    }
}

impl fmt::Debug for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Generate a DID whose id bytes come solely from `rng`. `entropy_bits`
/// must be 128 or 256.
pub fn generate_did(rng: &mut DetRng, entropy_bits: u32) -> Result<Did, IdentityError> {
    if entropy_bits != 128 && entropy_bits != 256 {
        return Err(IdentityError::InvalidEntropyBits(entropy_bits));
    }
    let mut id_bytes = vec![0u8; entropy_bits as usize / 8];
    rng.fill_bytes(&mut id_bytes);
    Ok(Did::new("agent", id_bytes))
}

/// A signed attestation that `subject` holds the listed claims, valid for
/// the inclusive tick window `[not_before, not_after]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifiableCredential {
    pub id: String,
    pub issuer: Did,
    pub subject: Did,
    pub claims: BTreeMap<String, String>,
    pub not_before: Tick,
    pub not_after: Tick,
    pub revoked: bool,
    pub signature: Vec<u8>,
}

impl VerifiableCredential {
    /// Canonical bytes covered by the issuer signature (everything except
    /// the signature and the local revocation marker).
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut c = CanonicalBytes::new("vc")
            .field(&self.issuer.canonical())
            .field(&self.subject.canonical())
            .u64(self.not_before)
            .u64(self.not_after);
        for (k, v) in &self.claims {
            c = c.text(k).text(v);
        }
        c.finish()
    }

    /// True when the credential attests the named capability. Capability
    /// claims use the convention `<name> -> "true"`.
    pub fn attests(&self, capability: &str) -> bool {
        self.claims.get(capability).map(String::as_str) == Some("true")
    }
}

/// Outcome of credential verification. On multiple defects the most severe
/// wins: bad signature over revoked over expired.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CredentialStatus {
    Accept,
    Expired,
    Revoked,
    BadSignature,
}

/// Issue a credential signed by `issuer_keys`.
pub fn issue_credential(
    issuer_keys: &KeyPair,
    issuer: &Did,
    subject: &Did,
    claims: BTreeMap<String, String>,
    validity: (Tick, Tick),
) -> Result<VerifiableCredential, IdentityError> {
    if claims.is_empty() {
        return Err(IdentityError::EmptyClaims);
    }
    let (not_before, not_after) = validity;
    if not_before > not_after {
        return Err(IdentityError::EmptyValidity { not_before, not_after });
    }
    let mut vc = VerifiableCredential {
        id: String::new(),
        issuer: issuer.clone(),
        subject: subject.clone(),
        claims,
        not_before,
        not_after,
        revoked: false,
        signature: Vec::new(),
    };
    let body = vc.signing_bytes();
    vc.id = hex::encode(crypto::sha256_tagged("vc-id", &body));
    vc.signature = crypto::sign(&issuer_keys.private_key, &body);
    Ok(vc)
}

/// Verify a credential against the issuer's public key, the clock, and a
/// revocation list of credential ids.
pub fn verify_credential(
    vc: &VerifiableCredential,
    issuer_public_key: &[u8],
    now: Tick,
    revocation_list: &BTreeSet<String>,
) -> CredentialStatus {
    if !crypto::verify(issuer_public_key, &vc.signing_bytes(), &vc.signature) {
        return CredentialStatus::BadSignature;
    }
    if vc.revoked || revocation_list.contains(&vc.id) {
        return CredentialStatus::Revoked;
    }
    if now < vc.not_before || now > vc.not_after {
        return CredentialStatus::Expired;
    }
    CredentialStatus::Accept
}

/// Dynamic per-agent context carried alongside the identity tuple.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentContext {
    pub current_task: Option<String>,
    pub delegation_refs: Vec<String>,
    /// Inclusive tick-of-day interval during which the agent may act.
    pub authorized_hours: Option<(Tick, Tick)>,
    pub clearance_level: i64,
}

/// The full agent identity tuple: DID, credentials, keys, capabilities and
/// context.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgentIdentity {
    pub did: Did,
    pub credentials: Vec<VerifiableCredential>,
    pub keys: KeyPair,
    pub capabilities: BTreeSet<String>,
    /// Capabilities claimed without credential backing. Never pass
    /// [`AgentIdentity::verify_capability`].
    pub self_asserted: BTreeSet<String>,
    pub context: AgentContext,
}

impl AgentIdentity {
    pub fn new(did: Did, keys: KeyPair) -> Self {
        Self {
            did,
            credentials: Vec::new(),
            keys,
            capabilities: BTreeSet::new(),
            self_asserted: BTreeSet::new(),
            context: AgentContext::default(),
        }
    }

    /// True iff the capability is backed by a credential that verifies and
    /// is currently valid. Self-asserted capabilities always fail.
    pub fn verify_capability(
        &self,
        capability: &str,
        issuer_keys: &BTreeMap<Did, Vec<u8>>,
        now: Tick,
        revocation_list: &BTreeSet<String>,
    ) -> bool {
        if self.self_asserted.contains(capability) {
            return false;
        }
        self.credentials.iter().any(|vc| {
            vc.attests(capability)
                && vc.subject == self.did
                && issuer_keys
                    .get(&vc.issuer)
                    .is_some_and(|pk| verify_credential(vc, pk, now, revocation_list) == CredentialStatus::Accept)
        })
    }
}

/// A cryptographically signed delegation of capabilities from one agent to
/// another.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelegationLink {
    pub delegator: Did,
    pub delegatee: Did,
    pub scope: BTreeSet<String>,
    pub expires_at: Tick,
    pub signature: Vec<u8>,
}

impl DelegationLink {
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut c = CanonicalBytes::new("delegation")
            .field(&self.delegator.canonical())
            .field(&self.delegatee.canonical())
            .u64(self.expires_at);
        for cap in &self.scope {
            c = c.text(cap);
        }
        c.finish()
    }

    /// Create and sign a link with the delegator's key.
    pub fn sign(
        delegator_keys: &KeyPair,
        delegator: &Did,
        delegatee: &Did,
        scope: BTreeSet<String>,
        expires_at: Tick,
    ) -> Self {
        let mut link = Self {
            delegator: delegator.clone(),
            delegatee: delegatee.clone(),
            scope,
            expires_at,
            signature: Vec::new(),
        };
        link.signature = crypto::sign(&delegator_keys.private_key, &link.signing_bytes());
        link
    }
}

/// Outcome of delegation-chain validation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelegationStatus {
    Valid,
    BrokenSignature,
    ExpiredLink,
    /// A link widened its predecessor's scope, or the requested capability
    /// was never delegated.
    ScopeEscalation,
}

/// Validate a delegation chain end to end: every signature verifies, no link
/// is expired, scopes only narrow, and the requested capability survives to
/// the final scope.
pub fn validate_delegation_chain(
    chain: &[DelegationLink],
    required_capability: &str,
    now: Tick,
    public_keys: &BTreeMap<Did, Vec<u8>>,
) -> Result<DelegationStatus, IdentityError> {
    if chain.is_empty() {
        return Err(IdentityError::EmptyChain);
    }
    for (i, window) in chain.windows(2).enumerate() {
        if window[0].delegatee != window[1].delegator {
            return Err(IdentityError::ChainDiscontinuity(i, i + 1));
        }
    }
    for (i, link) in chain.iter().enumerate() {
        let pk = public_keys
            .get(&link.delegator)
            .ok_or_else(|| IdentityError::UnknownKey(link.delegator.clone()))?;
        if !crypto::verify(pk, &link.signing_bytes(), &link.signature) {
            return Ok(DelegationStatus::BrokenSignature);
        }
        if now >= link.expires_at {
            return Ok(DelegationStatus::ExpiredLink);
        }
        if i > 0 && !link.scope.is_subset(&chain[i - 1].scope) {
            return Ok(DelegationStatus::ScopeEscalation);
        }
    }
    if !chain.last().expect("non-empty").scope.contains(required_capability) {
        return Ok(DelegationStatus::ScopeEscalation);
    }
    Ok(DelegationStatus::Valid)
}

/// Proof of key possession: a signature over `(nonce || responder || tick)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChallengeResponse {
    pub nonce: Vec<u8>,
    pub responder: Did,
    pub tick: Tick,
    pub proof: Vec<u8>,
}

fn challenge_bytes(nonce: &[u8], responder: &Did, tick: Tick) -> Vec<u8> {
    CanonicalBytes::new("challenge")
        .field(nonce)
        .field(&responder.canonical())
        .u64(tick)
        .finish()
}

/// Answer an identity challenge by signing the nonce with the identity's
/// private key.
pub fn answer_challenge(
    identity: &AgentIdentity,
    nonce: &[u8],
    now: Tick,
) -> Result<ChallengeResponse, IdentityError> {
    if nonce.len() != NONCE_LEN {
        return Err(IdentityError::BadNonceLength(nonce.len()));
    }
    let proof = crypto::sign(
        &identity.keys.private_key,
        &challenge_bytes(nonce, &identity.did, now),
    );
    Ok(ChallengeResponse {
        nonce: nonce.to_vec(),
        responder: identity.did.clone(),
        tick: now,
        proof,
    })
}

/// Verify a challenge response against the expected nonce and the
/// DID-registered public key.
pub fn verify_challenge(
    response: &ChallengeResponse,
    expected_nonce: &[u8],
    public_key: &[u8],
) -> bool {
    response.nonce == expected_nonce
        && crypto::verify(
            public_key,
            &challenge_bytes(&response.nonce, &response.responder, response.tick),
            &response.proof,
        )
}
