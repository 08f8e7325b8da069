//! Agent Name Service: hierarchical name parsing, PKI-backed registration,
//! capability-aware discovery and federated revocation propagation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{self, CanonicalBytes, KeyPair};
use crate::identity::{
    answer_challenge, verify_challenge, verify_credential, AgentIdentity, CredentialStatus, Did,
    VerifiableCredential, NONCE_LEN,
};
use crate::rng::DetRng;
use crate::Tick;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnsError {
    #[error("name parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },
}

/// Why a registration was refused.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistrationError {
    #[error("identity rejected: challenge-response failed")]
    IdentityRejected,
    #[error("capability `{0}` has no accepted credential backing")]
    CapabilityRejected(String),
    #[error("name `{0}` is already registered")]
    NameConflict(String),
}

/// Hierarchical agent name:
/// `<protocol>://<capability>.<domain>.<organization>.<version>.<compliance>`.
///
/// The version label may itself contain dots (`v2.1`), so parsing fixes the
/// three leading labels and the trailing compliance label and folds
/// everything between into the version.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnsName {
    pub protocol: String,
    pub capability: String,
    pub domain: String,
    pub organization: String,
    pub version: String,
    pub compliance: String,
}

impl AnsName {
    /// Parse the text form. Inverse of `Display`.
    pub fn parse(text: &str) -> Result<Self, AnsError> {
        let err = |position: usize, message: &str| AnsError::Parse {
            position,
            message: message.to_string(),
        };
        let sep = text.find("://").ok_or_else(|| err(0, "missing `://`"))?;
        let protocol = &text[..sep];
        if protocol.is_empty() {
            return Err(err(0, "empty protocol label"));
        }
        let body_start = sep + 3;
        let body = &text[body_start..];
        let labels: Vec<&str> = body.split('.').collect();
        if labels.len() < 5 {
            return Err(err(body_start, "expected at least 5 dot-separated labels"));
        }
        let mut pos = body_start;
        for label in &labels {
            if label.is_empty() {
                return Err(err(pos, "empty label"));
            }
            pos += label.len() + 1;
        }
        let compliance = labels[labels.len() - 1];
        let version = labels[3..labels.len() - 1].join(".");
        if !version.starts_with('v') {
            let version_pos = body_start + labels[..3].iter().map(|l| l.len() + 1).sum::<usize>();
            return Err(err(version_pos, "version label must start with 'v'"));
        }
        Ok(Self {
            protocol: protocol.to_string(),
            capability: labels[0].to_string(),
            domain: labels[1].to_string(),
            organization: labels[2].to_string(),
            version,
            compliance: compliance.to_string(),
        })
    }

    fn canonical(&self) -> Vec<u8> {
        CanonicalBytes::new("ans-name").text(&self.to_string()).finish()
    }
}

impl fmt::Display for AnsName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}://{}.{}.{}.{}.{}",
            self.protocol, self.capability, self.domain, self.organization, self.version, self.compliance
        )
    }
}

/// A CA-signed registry binding between a name, a DID and a public key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub name: AnsName,
    pub did: Did,
    pub public_key: Vec<u8>,
    pub capabilities: BTreeSet<String>,
    pub trust_score_snapshot: f64,
    pub ca_signature: Vec<u8>,
    /// Tick the CA signature was produced at; newest wins federation
    /// conflicts.
    pub ca_signed_at: Tick,
    pub revoked: bool,
}

impl RegistryEntry {
    pub fn signing_bytes(&self) -> Vec<u8> {
        CanonicalBytes::new("registry-entry")
            .field(&self.name.canonical())
            .text(&self.did.to_string())
            .field(&self.public_key)
            .finish()
    }

    pub fn verify_ca_signature(&self, ca_public_key: &[u8]) -> bool {
        crypto::verify(ca_public_key, &self.signing_bytes(), &self.ca_signature)
    }
}

/// An id revoked at a tick. Ids name credentials (hex id) or registry
/// entries (rendered name).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RevocationEvent {
    pub tick: Tick,
    pub id: String,
}

/// One node of the federated registry network.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FederatedRegistry {
    pub node_id: String,
    /// CA key shared across the federation.
    pub ca_keys: KeyPair,
    pub entries: BTreeMap<String, RegistryEntry>,
    pub peers: Vec<String>,
    pub revocation_feed: Vec<RevocationEvent>,
    /// Credential ids currently considered revoked at this node.
    pub revoked_credentials: BTreeSet<String>,
}

impl FederatedRegistry {
    pub fn new(node_id: impl Into<String>, ca_keys: KeyPair) -> Self {
        Self {
            node_id: node_id.into(),
            ca_keys,
            entries: BTreeMap::new(),
            peers: Vec::new(),
            revocation_feed: Vec::new(),
            revoked_credentials: BTreeSet::new(),
        }
    }

    /// RA + CA registration: the identity must answer a fresh challenge,
    /// back the name's capability claim with accepted credentials, and the
    /// name must be unclaimed. On success a CA-signed entry is stored.
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        &mut self,
        identity: &AgentIdentity,
        name: AnsName,
        ra_evidence: &BTreeMap<String, VerifiableCredential>,
        trusted_issuers: &BTreeMap<Did, Vec<u8>>,
        trust_score_snapshot: f64,
        now: Tick,
        rng: &mut DetRng,
    ) -> Result<&RegistryEntry, RegistrationError> {
        let rendered = name.to_string();
        if self.entries.contains_key(&rendered) {
            return Err(RegistrationError::NameConflict(rendered));
        }

        // RA step 1: proof of key possession via fresh challenge.
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let response = answer_challenge(identity, &nonce, now)
            .map_err(|_| RegistrationError::IdentityRejected)?;
        if !verify_challenge(&response, &nonce, &identity.keys.public_key) {
            return Err(RegistrationError::IdentityRejected);
        }

        // RA step 2: each claimed capability needs an accepted credential.
        let mut required: BTreeSet<String> = identity.capabilities.clone();
        required.insert(name.capability.clone());
        let mut verified = BTreeSet::new();
        for capability in &required {
            let ok = ra_evidence.get(capability).is_some_and(|vc| {
                vc.subject == identity.did
                    && vc.attests(capability)
                    && trusted_issuers.get(&vc.issuer).is_some_and(|pk| {
                        verify_credential(vc, pk, now, &self.revoked_credentials)
                            == CredentialStatus::Accept
                    })
            });
            if !ok {
                return Err(RegistrationError::CapabilityRejected(capability.clone()));
            }
            verified.insert(capability.clone());
        }

        // CA step: sign the binding.
        let mut entry = RegistryEntry {
            name,
            did: identity.did.clone(),
            public_key: identity.keys.public_key.clone(),
            capabilities: verified,
            trust_score_snapshot,
            ca_signature: Vec::new(),
            ca_signed_at: now,
            revoked: false,
        };
        entry.ca_signature = crypto::sign(&self.ca_keys.private_key, &entry.signing_bytes());
        Ok(self.entries.entry(rendered).or_insert(entry))
    }

    /// Capability-aware discovery: unrevoked entries matching the capability
    /// and filters, sorted by trust descending then name ascending.
    pub fn discover(
        &self,
        required_capability: &str,
        min_trust: f64,
        compliance_filter: Option<&str>,
    ) -> Vec<&RegistryEntry> {
        let mut hits: Vec<&RegistryEntry> = self
            .entries
            .values()
            .filter(|e| !e.revoked)
            .filter(|e| e.capabilities.contains(required_capability) || e.name.capability == required_capability)
            .filter(|e| e.trust_score_snapshot >= min_trust)
            .filter(|e| compliance_filter.is_none_or(|c| e.name.compliance == c))
            .collect();
        hits.sort_by(|a, b| {
            b.trust_score_snapshot
                .partial_cmp(&a.trust_score_snapshot)
                .expect("trust snapshots are finite")
                .then_with(|| a.name.cmp(&b.name))
        });
        hits
    }

    /// Revoke an id locally and append it to the feed for propagation.
    pub fn revoke(&mut self, id: impl Into<String>, now: Tick) {
        let id = id.into();
        self.revocation_feed.push(RevocationEvent { tick: now, id: id.clone() });
        self.apply_revocation(&id);
    }

    fn apply_revocation(&mut self, id: &str) {
        if let Some(entry) = self.entries.get_mut(id) {
            entry.revoked = true;
        } else {
            self.revoked_credentials.insert(id.to_string());
        }
    }

    /// Refresh a registered agent's trust snapshot.
    pub fn refresh_trust(&mut self, did: &Did, trust: f64) {
        for entry in self.entries.values_mut() {
            if &entry.did == did {
                entry.trust_score_snapshot = trust;
            }
        }
    }

    /// Ordered text export of the revocation feed.
    pub fn export_revocations(&self) -> String {
        let mut feed = self.revocation_feed.clone();
        feed.sort();
        feed.iter()
            .map(|ev| format!("{}\t{}\n", ev.tick, ev.id))
            .collect()
    }

    /// Serialize the node for scenario-format dump/load.
    pub fn dump_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry serializes")
    }

    pub fn load_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Pairwise federation sync: both nodes end up with the union of entries
/// (newest CA signature wins conflicts) and revocation feeds. Returns
/// `(entries_exchanged, revocations_exchanged)`; a repeated sync exchanges
/// nothing.
pub fn sync(a: &mut FederatedRegistry, b: &mut FederatedRegistry) -> (usize, usize) {
    let mut entries_exchanged = 0;
    let mut revocations_exchanged = 0;

    let merge_entries = |from: &FederatedRegistry, to: &mut FederatedRegistry, moved: &mut usize| {
        for (key, entry) in &from.entries {
            match to.entries.get(key) {
                Some(existing)
                    if existing.ca_signed_at >= entry.ca_signed_at
                        && existing.revoked == entry.revoked => {}
                Some(existing) if existing.ca_signed_at >= entry.ca_signed_at => {
                    // Same binding age but revocation news travels too.
                    if entry.revoked && !existing.revoked {
                        to.entries.get_mut(key).expect("present").revoked = true;
                        *moved += 1;
                    }
                }
                _ => {
                    to.entries.insert(key.clone(), entry.clone());
                    *moved += 1;
                }
            }
        }
    };
    let snapshot_a = a.clone();
    merge_entries(&snapshot_a, b, &mut entries_exchanged);
    let snapshot_b = b.clone();
    merge_entries(&snapshot_b, a, &mut entries_exchanged);

    let merge_feed = |from: &FederatedRegistry, to: &mut FederatedRegistry, moved: &mut usize| {
        for ev in &from.revocation_feed {
            if !to.revocation_feed.contains(ev) {
                to.revocation_feed.push(ev.clone());
                to.apply_revocation(&ev.id);
                *moved += 1;
            }
        }
        to.revocation_feed.sort();
    };
    let feed_a = a.clone();
    merge_feed(&feed_a, b, &mut revocations_exchanged);
    let feed_b = b.clone();
    merge_feed(&feed_b, a, &mut revocations_exchanged);

    (entries_exchanged, revocations_exchanged)
}
