//! Agent memory: short-term/long-term partition, hash-chained long-term
//! entries, integrity verification, quarantine and similarity retrieval.
//!
//! Long-term memory forms a tamper-evident chain: each entry hashes its
//! content, timestamp, source and the previous entry's hash. Short-term
//! memory is wiped at session end; per-session chain-head snapshots support
//! fallback provenance checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{sha256_tagged, CanonicalBytes};
use crate::embedding::cosine;
use crate::identity::Did;
use crate::Tick;

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("trust score {0} outside [0, 1]")]
    TrustOutOfRange(f64),
    #[error("embedding dimension {got} does not match store dimension {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("index {index} out of bounds for chain of length {len}")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("k must be at least 1")]
    ZeroK,
}

/// Where a memory entry came from.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemorySource {
    Agent(Did),
    External(String),
}

impl MemorySource {
    fn canonical(&self) -> Vec<u8> {
        match self {
            MemorySource::Agent(did) => CanonicalBytes::new("src-agent").text(&did.to_string()).finish(),
            MemorySource::External(label) => CanonicalBytes::new("src-ext").text(label).finish(),
        }
    }

    pub fn is_external(&self) -> bool {
        matches!(self, MemorySource::External(_))
    }
}

/// Memory tier selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    ShortTerm,
    LongTerm,
}

/// One memory record: content, timestamp, source, trust score, embedding,
/// plus the chain linkage fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub content: String,
    pub timestamp: Tick,
    pub source: MemorySource,
    pub trust_score: f64,
    pub embedding: Vec<f64>,
    pub prev_hash: [u8; 32],
    pub entry_hash: [u8; 32],
    pub revoked: bool,
}

impl MemoryEntry {
    /// Recompute the chain hash from the hashed fields.
    pub fn compute_hash(&self) -> [u8; 32] {
        entry_hash(&self.content, self.timestamp, &self.source, &self.prev_hash)
    }
}

fn entry_hash(content: &str, timestamp: Tick, source: &MemorySource, prev_hash: &[u8; 32]) -> [u8; 32] {
    let bytes = CanonicalBytes::new("mem-entry")
        .text(content)
        .u64(timestamp)
        .field(&source.canonical())
        .field(prev_hash)
        .finish();
    sha256_tagged("mem-hash", &bytes)
}

/// The fixed hash every long-term chain starts from.
pub fn genesis_hash() -> [u8; 32] {
    sha256_tagged("mem-genesis", b"")
}

/// Result of long-term chain verification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrityStatus {
    Ok,
    /// Index of the earliest entry whose hash or linkage fails. A value of
    /// `len` means all entries link but the chain head disagrees (a
    /// truncation at the tail).
    BrokenAt(usize),
}

/// Chain-head snapshot recorded at session end, used for fallback
/// provenance verification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub tick: Tick,
    pub chain_len: usize,
    pub chain_head: [u8; 32],
}

/// Per-agent memory store.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MemoryStore {
    pub agent: Did,
    pub dim: usize,
    pub short_term: Vec<MemoryEntry>,
    pub long_term: Vec<MemoryEntry>,
    pub quarantine: Vec<MemoryEntry>,
    pub chain_head: [u8; 32],
    pub session_snapshots: Vec<SessionSnapshot>,
}

impl MemoryStore {
    pub fn new(agent: Did, dim: usize) -> Self {
        Self {
            agent,
            dim,
            short_term: Vec::new(),
            long_term: Vec::new(),
            quarantine: Vec::new(),
            chain_head: genesis_hash(),
            session_snapshots: Vec::new(),
        }
    }

    /// Append an entry. Long-term appends extend the hash chain.
    pub fn append(
        &mut self,
        content: impl Into<String>,
        source: MemorySource,
        trust_score: f64,
        embedding: Vec<f64>,
        tier: Tier,
        now: Tick,
    ) -> Result<&MemoryEntry, MemoryError> {
        if !(0.0..=1.0).contains(&trust_score) {
            return Err(MemoryError::TrustOutOfRange(trust_score));
        }
        if embedding.len() != self.dim {
            return Err(MemoryError::DimensionMismatch {
                got: embedding.len(),
                want: self.dim,
            });
        }
        let content = content.into();
        match tier {
            Tier::LongTerm => {
                let prev_hash = self.chain_head;
                let hash = entry_hash(&content, now, &source, &prev_hash);
                self.long_term.push(MemoryEntry {
                    content,
                    timestamp: now,
                    source,
                    trust_score,
                    embedding,
                    prev_hash,
                    entry_hash: hash,
                    revoked: false,
                });
                self.chain_head = hash;
                Ok(self.long_term.last().expect("just pushed"))
            }
            Tier::ShortTerm => {
                // Short-term entries are not chained; they die with the session.
                let prev_hash = [0u8; 32];
                let hash = entry_hash(&content, now, &source, &prev_hash);
                self.short_term.push(MemoryEntry {
                    content,
                    timestamp: now,
                    source,
                    trust_score,
                    embedding,
                    prev_hash,
                    entry_hash: hash,
                    revoked: false,
                });
                Ok(self.short_term.last().expect("just pushed"))
            }
        }
    }

    /// Verify the long-term hash chain from genesis to head.
    pub fn verify_integrity(&self) -> IntegrityStatus {
        let mut expected_prev = genesis_hash();
        for (i, entry) in self.long_term.iter().enumerate() {
            if entry.prev_hash != expected_prev || entry.compute_hash() != entry.entry_hash {
                return IntegrityStatus::BrokenAt(i);
            }
            expected_prev = entry.entry_hash;
        }
        if self.chain_head != expected_prev {
            return IntegrityStatus::BrokenAt(self.long_term.len());
        }
        IntegrityStatus::Ok
    }

    /// Move long-term entries from `index` onward into quarantine with
    /// revocation markers, rewinding the chain head. Returns the number of
    /// entries quarantined.
    pub fn quarantine_from(&mut self, index: usize) -> Result<usize, MemoryError> {
        if index > self.long_term.len() {
            return Err(MemoryError::IndexOutOfBounds {
                index,
                len: self.long_term.len(),
            });
        }
        let removed: Vec<MemoryEntry> = self.long_term.drain(index..).collect();
        let count = removed.len();
        for mut e in removed {
            e.revoked = true;
            self.quarantine.push(e);
        }
        self.chain_head = match self.long_term.last() {
            Some(last) => last.entry_hash,
            None => genesis_hash(),
        };
        Ok(count)
    }

    /// Top-k unrevoked entries across both tiers by cosine similarity.
    /// Ties break toward newer timestamps, then long-term before
    /// short-term, then insertion order.
    pub fn retrieve(&self, query: &[f64], k: usize) -> Result<Vec<&MemoryEntry>, MemoryError> {
        if k == 0 {
            return Err(MemoryError::ZeroK);
        }
        if query.len() != self.dim {
            return Err(MemoryError::DimensionMismatch {
                got: query.len(),
                want: self.dim,
            });
        }
        // tier_rank 0 = long-term, 1 = short-term.
        let mut scored: Vec<(f64, Tick, u8, usize, &MemoryEntry)> = Vec::new();
        for (idx, e) in self.long_term.iter().enumerate() {
            if !e.revoked {
                scored.push((cosine(query, &e.embedding), e.timestamp, 0, idx, e));
            }
        }
        for (idx, e) in self.short_term.iter().enumerate() {
            if !e.revoked {
                scored.push((cosine(query, &e.embedding), e.timestamp, 1, idx, e));
            }
        }
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("similarities are finite")
                .then(b.1.cmp(&a.1))
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });
        Ok(scored.into_iter().take(k).map(|t| t.4).collect())
    }

    /// End the current session: wipe short-term memory and snapshot the
    /// long-term chain head.
    pub fn end_session(&mut self, now: Tick) {
        self.short_term.clear();
        self.session_snapshots.push(SessionSnapshot {
            tick: now,
            chain_len: self.long_term.len(),
            chain_head: self.chain_head,
        });
    }

    /// Fallback provenance verification against recorded session snapshots.
    /// Returns the index the chain diverges at (the first entry past the
    /// newest snapshot that still matches), or `None` when all snapshots
    /// agree with the current chain.
    pub fn snapshot_divergence(&self) -> Option<usize> {
        let mut last_consistent = 0usize;
        let mut diverged = false;
        for snap in &self.session_snapshots {
            let matches = if snap.chain_len == 0 {
                snap.chain_head == genesis_hash()
            } else {
                self.long_term
                    .get(snap.chain_len - 1)
                    .is_some_and(|e| e.entry_hash == snap.chain_head)
            };
            if matches {
                last_consistent = last_consistent.max(snap.chain_len);
            } else {
                diverged = true;
            }
        }
        if diverged {
            Some(last_consistent)
        } else {
            None
        }
    }

    /// Total number of retrievable (unrevoked) entries.
    pub fn live_len(&self) -> usize {
        self.long_term.iter().filter(|e| !e.revoked).count()
            + self.short_term.iter().filter(|e| !e.revoked).count()
    }

    /// Line-delimited structured dump of all tiers for audit reports.
    pub fn dump_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |tier: &str, entries: &[MemoryEntry]| {
            for (i, e) in entries.iter().enumerate() {
                let line = serde_json::json!({
                    "tier": tier,
                    "index": i,
                    "timestamp": e.timestamp,
                    "source": match &e.source {
                        MemorySource::Agent(did) => format!("agent:{did}"),
                        MemorySource::External(label) => format!("external:{label}"),
                    },
                    "trust_score": e.trust_score,
                    "revoked": e.revoked,
                    "entry_hash": hex::encode(e.entry_hash),
                    "content": e.content,
                });
                out.push_str(&line.to_string());
                out.push('\n');
            }
        };
        push("long_term", &self.long_term);
        push("short_term", &self.short_term);
        push("quarantine", &self.quarantine);
        out
    }
}
