//! Pluggable signature schemes for proofs of authentication.
//!
//! Two schemes ship: Ed25519 for realism and a keyed-MAC scheme whose
//! verification key is derived from a seed shared by every participant. The
//! MAC scheme is not secure against insiders; it exists so that simulations
//! with millions of verifications stay fast.

use std::fmt;

use ed25519_dalek::{Signer as _, SigningKey, Verifier as _, VerifyingKey};
use hmac::{Hmac, Mac};
use sha2::{Digest as _, Sha256};

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PublicKey(pub Vec<u8>);

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Signature(pub Vec<u8>);

#[derive(Clone)]
pub struct KeyPair {
    pub public: PublicKey,
    secret: [u8; 32],
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(&self.0[..self.0.len().min(8)]))
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", hex::encode(&self.0[..self.0.len().min(8)]))
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

pub trait SignatureProvider: Send + Sync + fmt::Debug {
    fn scheme_name(&self) -> &'static str;
    /// Deterministic key generation; simulations derive seeds from the run seed.
    fn keypair_from_seed(&self, seed: &[u8; 32]) -> KeyPair;
    fn sign(&self, keys: &KeyPair, msg: &[u8]) -> Signature;
    fn verify(&self, public: &PublicKey, msg: &[u8], sig: &Signature) -> bool;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Ed25519Provider;

impl SignatureProvider for Ed25519Provider {
    fn scheme_name(&self) -> &'static str {
        "ed25519"
    }

    fn keypair_from_seed(&self, seed: &[u8; 32]) -> KeyPair {
        let sk = SigningKey::from_bytes(seed);
        KeyPair { public: PublicKey(sk.verifying_key().to_bytes().to_vec()), secret: *seed }
    }

    fn sign(&self, keys: &KeyPair, msg: &[u8]) -> Signature {
        let sk = SigningKey::from_bytes(&keys.secret);
        Signature(sk.sign(msg).to_bytes().to_vec())
    }

    fn verify(&self, public: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
        let Ok(pk_bytes) = <[u8; 32]>::try_from(public.0.as_slice()) else {
            return false;
        };
        let Ok(vk) = VerifyingKey::from_bytes(&pk_bytes) else {
            return false;
        };
        let Ok(sig) = ed25519_dalek::Signature::from_slice(&sig.0) else {
            return false;
        };
        vk.verify(msg, &sig).is_ok()
    }
}

/// HMAC-SHA256 over a key derived as `SHA-256(shared_seed || public_key)`.
#[derive(Clone)]
pub struct KeyedMacProvider {
    shared_seed: [u8; 32],
}

impl fmt::Debug for KeyedMacProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("KeyedMacProvider")
    }
}

impl KeyedMacProvider {
    pub fn new(shared_seed: [u8; 32]) -> Self {
        KeyedMacProvider { shared_seed }
    }

    fn mac_key(&self, public: &PublicKey) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.shared_seed);
        h.update(&public.0);
        h.finalize().into()
    }

    fn tag(&self, public: &PublicKey, msg: &[u8]) -> Vec<u8> {
        let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(&self.mac_key(public))
            .expect("HMAC accepts any key length");
        mac.update(msg);
        mac.finalize().into_bytes().to_vec()
    }
}

impl SignatureProvider for KeyedMacProvider {
    fn scheme_name(&self) -> &'static str {
        "keyed-mac"
    }

    fn keypair_from_seed(&self, seed: &[u8; 32]) -> KeyPair {
        let mut h = Sha256::new();
        h.update(b"dledger-mac-public");
        h.update(seed);
        KeyPair { public: PublicKey(h.finalize().to_vec()), secret: *seed }
    }

    fn sign(&self, keys: &KeyPair, msg: &[u8]) -> Signature {
        Signature(self.tag(&keys.public, msg))
    }

    fn verify(&self, public: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
        // Constant-time comparison is irrelevant for a simulation-only scheme.
        self.tag(public, msg) == sig.0
    }
}

/// Derives a 32-byte key seed from a run seed and a label.
pub fn derive_seed(run_seed: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(run_seed.to_be_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}
