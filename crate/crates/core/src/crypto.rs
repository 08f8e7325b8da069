//! Simulation-grade cryptography behind an abstract signer/verifier
//! interface.
//!
//! The default scheme is a deterministic keyed hash over canonical bytes.
//! It is a MAC, not a real signature: the public and private halves carry
//! the same key material, which is sound only inside a closed simulation
//! where adversaries are structurally denied other agents' key bytes. The
//! trait boundary is what matters: swapping in a real asymmetric scheme
//! changes nothing above it.

use crate::rng::DetRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// 256-bit digest over a domain tag and a message.
pub fn sha256_tagged(tag: &str, data: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update(data);
    h.finalize().into()
}

/// Canonical serialization for signing: a domain tag followed by
/// length-prefixed fields in declared order. Bit-exact across platforms.
pub struct CanonicalBytes {
    buf: Vec<u8>,
}

impl CanonicalBytes {
    pub fn new(tag: &str) -> Self {
        let mut buf = Vec::with_capacity(64);
        buf.extend_from_slice(&(tag.len() as u32).to_le_bytes());
        buf.extend_from_slice(tag.as_bytes());
        Self { buf }
    }

    pub fn field(mut self, bytes: &[u8]) -> Self {
        self.buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn text(self, s: &str) -> Self {
        self.field(s.as_bytes())
    }

    pub fn u64(self, v: u64) -> Self {
        self.field(&v.to_le_bytes())
    }

    pub fn i64(self, v: i64) -> Self {
        self.field(&v.to_le_bytes())
    }

    pub fn f64(self, v: f64) -> Self {
        self.field(&v.to_bits().to_le_bytes())
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Signing and verification key material.
///
/// Under the default [`KeyedHashScheme`] both halves hold the same 32 key
/// bytes; see the module docs for why that is acceptable here.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPair {
    pub public_key: Vec<u8>,
    pub private_key: Vec<u8>,
}

/// Abstract signature scheme. One detection seam for cryptographic agility:
/// everything above signs and verifies through this interface.
pub trait SignatureScheme {
    fn generate_keypair(&self, rng: &mut DetRng) -> KeyPair;
    fn sign(&self, private_key: &[u8], message: &[u8]) -> Vec<u8>;
    fn verify(&self, public_key: &[u8], message: &[u8], signature: &[u8]) -> bool;
}

/// Deterministic keyed-hash scheme: `sig = H(tag || key || message)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct KeyedHashScheme;

impl SignatureScheme for KeyedHashScheme {
    fn generate_keypair(&self, rng: &mut DetRng) -> KeyPair {
        let mut key = vec![0u8; 32];
        rng.fill_bytes(&mut key);
        KeyPair {
            public_key: key.clone(),
            private_key: key,
        }
    }

    fn sign(&self, private_key: &[u8], message: &[u8]) -> Vec<u8> {
        let mut h = Sha256::new();
        h.update(b"sig-v1");
        h.update((private_key.len() as u64).to_le_bytes());
        h.update(private_key);
        h.update(message);
        h.finalize().to_vec()
    }

    fn verify(&self, public_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
        self.sign(public_key, message) == signature
    }
}

/// Sign with the fabric's default scheme.
pub fn sign(private_key: &[u8], message: &[u8]) -> Vec<u8> {
    KeyedHashScheme.sign(private_key, message)
}

/// Verify against the fabric's default scheme.
pub fn verify(public_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
    KeyedHashScheme.verify(public_key, message, signature)
}

/// Generate a key pair from a deterministic stream.
pub fn generate_keypair(rng: &mut DetRng) -> KeyPair {
    KeyedHashScheme.generate_keypair(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kp(label: &str) -> KeyPair {
        generate_keypair(&mut DetRng::for_site(1, label, 0))
    }

    #[test]
    fn sign_verify_roundtrip() {
        let k = kp("a");
        let sig = sign(&k.private_key, b"hello");
        assert!(verify(&k.public_key, b"hello", &sig));
    }

    #[test]
    fn wrong_key_rejected() {
        let a = kp("a");
        let b = kp("b");
        let sig = sign(&a.private_key, b"hello");
        assert!(!verify(&b.public_key, b"hello", &sig));
    }

    #[test]
    fn single_bit_mutations_rejected() {
        let k = kp("a");
        let msg = b"the quick brown fox".to_vec();
        let sig = sign(&k.private_key, &msg);
        let mut rng = DetRng::for_site(99, "mutate", 0);
        for _ in 0..10_000 {
            if rng.chance(0.5) {
                let mut m = msg.clone();
                let i = rng.range(0, m.len() as u64) as usize;
                m[i] ^= 1 << rng.range(0, 8);
                assert!(!verify(&k.public_key, &m, &sig));
            } else {
                let mut s = sig.clone();
                let i = rng.range(0, s.len() as u64) as usize;
                s[i] ^= 1 << rng.range(0, 8);
                assert!(!verify(&k.public_key, &msg, &s));
            }
        }
    }

    #[test]
    fn canonical_bytes_are_prefix_free() {
        // ("ab", "c") and ("a", "bc") must serialize differently.
        let x = CanonicalBytes::new("t").text("ab").text("c").finish();
        let y = CanonicalBytes::new("t").text("a").text("bc").finish();
        assert_ne!(x, y);
    }
}
