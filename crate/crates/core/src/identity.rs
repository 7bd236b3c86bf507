//! Identity management: manager trust roots, certificate and revocation
//! bookkeeping, signer resolution, and the identity manager's record
//! creation.
//!
//! Certificates live in ledger records. A signer is honoured only if the
//! record carrying its certificate is confirmed and no confirmed revocation
//! names it. Revocation records carry a back-pointer to the previous
//! revocation, so checking a certificate walks that short chain instead of
//! scanning the DAG.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::RngCore;
use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::crypto::{KeyPair, PublicKey, SignatureProvider};
use crate::ledger::{Ledger, LedgerError};
use crate::record::{
    Certificate, EntityId, KeyLocator, PayloadKind, Record, RecordError, RecordName, RecordPayload,
    RevocationNotice, UnsignedRecord,
};

/// Manager root keys installed out of band, plus a cache of resolved
/// certificates.
#[derive(Clone, Debug, Default)]
pub struct TrustStore {
    roots: BTreeMap<EntityId, PublicKey>,
    resolved: FxHashMap<RecordName, Certificate>,
}

impl TrustStore {
    pub fn new() -> Self {
        TrustStore::default()
    }

    pub fn with_root(mut self, manager: EntityId, key: PublicKey) -> Self {
        self.add_root(manager, key);
        self
    }

    pub fn add_root(&mut self, manager: EntityId, key: PublicKey) {
        self.roots.insert(manager, key);
    }

    pub fn root(&self, manager: &EntityId) -> Option<&PublicKey> {
        self.roots.get(manager)
    }

    pub fn roots(&self) -> impl Iterator<Item = (&EntityId, &PublicKey)> {
        self.roots.iter()
    }

    pub fn is_manager(&self, id: &EntityId) -> bool {
        self.roots.contains_key(id)
    }

    pub(crate) fn invalidate_cache(&mut self) {
        self.resolved.clear();
    }

    pub(crate) fn cached(&self, name: &RecordName) -> Option<&Certificate> {
        self.resolved.get(name)
    }

    pub(crate) fn cache(&mut self, name: RecordName, cert: Certificate) {
        self.resolved.insert(name, cert);
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResolveError {
    #[error("no certificate record or root for this key locator")]
    NotFound,
    #[error("certificate record is not confirmed")]
    NotConfirmed,
    #[error("certificate revoked by {0}")]
    Revoked(RecordName),
    #[error("certificate not valid at this time")]
    Expired,
    #[error("certificate issuer is not a trusted manager")]
    UntrustedIssuer,
}

/// Key material a PoA is checked against.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolvedSigner {
    pub subject: EntityId,
    pub public_key: PublicKey,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RevocationStatus {
    Valid,
    Revoked(RecordName),
    Unknown,
}

#[derive(Clone, Debug)]
struct CertEntry {
    cert: Certificate,
    confirmed: bool,
}

#[derive(Clone, Debug)]
struct RevocationEntry {
    notice: RevocationNotice,
    prev: Option<RecordName>,
    confirmed: bool,
    chain_len: usize,
}

/// Certificates and revocations seen in stored records. Entries survive
/// archiving of the carrying record, so archived certificates stay resolvable.
#[derive(Clone, Debug, Default)]
pub(crate) struct IdentityIndex {
    certs: FxHashMap<RecordName, CertEntry>,
    revocations: FxHashMap<RecordName, RevocationEntry>,
    head: Option<RecordName>,
}

impl IdentityIndex {
    pub(crate) fn on_stored(&mut self, rec: &Record, confirmed: bool) {
        match rec.payload.kind {
            PayloadKind::CertIssuance | PayloadKind::Genesis => {
                if let Some(cert) = rec.payload.certificate() {
                    self.certs.insert(rec.name.clone(), CertEntry { cert, confirmed });
                }
            }
            PayloadKind::CertRevocation => {
                if let Some(notice) = rec.payload.revocation_notice() {
                    let prev = rec.payload.prev_revocation.clone();
                    let chain_len = 1 + prev
                        .as_ref()
                        .and_then(|p| self.revocations.get(p))
                        .map_or(0, |e| e.chain_len);
                    self.revocations.insert(
                        rec.name.clone(),
                        RevocationEntry { notice, prev, confirmed: false, chain_len },
                    );
                    if confirmed {
                        self.on_confirmed(&rec.name);
                    }
                }
            }
            PayloadKind::Application => {}
        }
    }

    /// Returns true when the confirmation changes revocation state.
    pub(crate) fn on_confirmed(&mut self, name: &RecordName) -> bool {
        if let Some(c) = self.certs.get_mut(name) {
            c.confirmed = true;
            return false;
        }
        let Some(r) = self.revocations.get_mut(name) else {
            return false;
        };
        r.confirmed = true;
        let len = r.chain_len;
        let better = match &self.head {
            None => true,
            Some(h) => {
                let hl = self.revocations.get(h).map_or(0, |e| e.chain_len);
                len > hl || (len == hl && name > h)
            }
        };
        if better {
            self.head = Some(name.clone());
        }
        true
    }

    pub(crate) fn on_removed(&mut self, name: &RecordName) {
        self.certs.remove(name);
        if self.revocations.remove(name).is_some() && self.head.as_ref() == Some(name) {
            self.head = self
                .revocations
                .iter()
                .filter(|(_, e)| e.confirmed)
                .max_by(|a, b| a.1.chain_len.cmp(&b.1.chain_len).then(a.0.cmp(b.0)))
                .map(|(n, _)| n.clone());
        }
    }

    pub(crate) fn certificate(&self, name: &RecordName) -> Option<(&Certificate, bool)> {
        self.certs.get(name).map(|e| (&e.cert, e.confirmed))
    }

    pub(crate) fn certificates(&self) -> impl Iterator<Item = (&RecordName, &Certificate, bool)> {
        self.certs.iter().map(|(n, e)| (n, &e.cert, e.confirmed))
    }

    pub(crate) fn latest_revocation(&self) -> Option<&RecordName> {
        self.head.as_ref()
    }

    /// Walks the back-pointer chain from the latest confirmed revocation.
    pub(crate) fn status(&self, cert: &RecordName) -> RevocationStatus {
        if !self.certs.contains_key(cert) {
            return RevocationStatus::Unknown;
        }
        let mut cursor = self.head.clone();
        while let Some(name) = cursor {
            let Some(entry) = self.revocations.get(&name) else {
                break;
            };
            if entry.confirmed && &entry.notice.revoked_cert == cert {
                return RevocationStatus::Revoked(name);
            }
            cursor = entry.prev.clone();
        }
        RevocationStatus::Valid
    }
}

/// Resolves a key locator to the key that must verify a PoA.
pub(crate) fn resolve_signer(
    trust: &mut TrustStore,
    index: &IdentityIndex,
    locator: &KeyLocator,
    now_secs: f64,
) -> Result<ResolvedSigner, ResolveError> {
    match locator {
        KeyLocator::Root(manager) => trust
            .root(manager)
            .map(|k| ResolvedSigner { subject: manager.clone(), public_key: k.clone() })
            .ok_or(ResolveError::NotFound),
        KeyLocator::Cert(name) => {
            if let Some(cert) = trust.cached(name) {
                if !cert.valid_at(now_secs) {
                    return Err(ResolveError::Expired);
                }
                return Ok(ResolvedSigner {
                    subject: cert.subject.clone(),
                    public_key: cert.public_key.clone(),
                });
            }
            let (cert, confirmed) = index.certificate(name).ok_or(ResolveError::NotFound)?;
            if !trust.is_manager(&cert.issuer) {
                return Err(ResolveError::UntrustedIssuer);
            }
            if !confirmed {
                return Err(ResolveError::NotConfirmed);
            }
            if let RevocationStatus::Revoked(by) = index.status(name) {
                return Err(ResolveError::Revoked(by));
            }
            if !cert.valid_at(now_secs) {
                return Err(ResolveError::Expired);
            }
            let resolved =
                ResolvedSigner { subject: cert.subject.clone(), public_key: cert.public_key.clone() };
            trust.cache(name.clone(), cert.clone());
            Ok(resolved)
        }
    }
}

#[derive(Debug, Error)]
pub enum IdentityError {
    #[error("{0} already holds an unrevoked confirmed certificate")]
    DuplicateSubject(EntityId),
    #[error("{0} does not name a confirmed certificate issuance record")]
    UnknownCert(RecordName),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Record(#[from] RecordError),
}

/// The identity manager's own state: its root key and the last revocation it
/// issued.
#[derive(Debug)]
pub struct IdentityManager {
    id: EntityId,
    keys: KeyPair,
    provider: Arc<dyn SignatureProvider>,
    last_revocation: Option<RecordName>,
}

impl IdentityManager {
    pub fn new(id: EntityId, keys: KeyPair, provider: Arc<dyn SignatureProvider>) -> Self {
        IdentityManager { id, keys, provider, last_revocation: None }
    }

    pub fn id(&self) -> &EntityId {
        &self.id
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.keys.public
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn trust_store(&self) -> TrustStore {
        TrustStore::new().with_root(self.id.clone(), self.keys.public.clone())
    }

    /// Certificate for `subject` valid for the whole run.
    pub fn certificate_for(&self, subject: EntityId, public_key: PublicKey) -> Certificate {
        Certificate { subject, public_key, issuer: self.id.clone(), not_before: 0, not_after: u64::MAX }
    }

    /// Bootstrap records: one per certificate, padded with marker records up to
    /// `min_records`. They approve nothing and are injected as confirmed.
    pub fn genesis(&self, certs: &[Certificate], min_records: usize) -> Vec<Arc<Record>> {
        let total = certs.len().max(min_records);
        (0..total)
            .map(|i| {
                let payload = RecordPayload::genesis(certs.get(i), format!("genesis-{i}").as_bytes());
                let rec = UnsignedRecord {
                    generator: self.id.clone(),
                    approved: Vec::new(),
                    payload,
                    signer_key: KeyLocator::Root(self.id.clone()),
                }
                .sign(self.provider.as_ref(), &self.keys, usize::MAX)
                .expect("genesis payloads are well formed");
                Arc::new(rec)
            })
            .collect()
    }

    /// Creates a certificate issuance record through the ordinary creation path,
    /// so the manager obeys the interlock and contribution rules like any peer.
    pub fn issue_certificate(
        &mut self,
        ledger: &Ledger,
        subject: EntityId,
        public_key: PublicKey,
        rng: &mut dyn RngCore,
    ) -> Result<Record, IdentityError> {
        let holds_valid = ledger.identity().certificates().any(|(name, cert, confirmed)| {
            cert.subject == subject
                && confirmed
                && ledger.identity().status(name) == RevocationStatus::Valid
        });
        if holds_valid {
            return Err(IdentityError::DuplicateSubject(subject));
        }
        let cert = self.certificate_for(subject, public_key);
        let rec = ledger.create_record(
            &self.id,
            RecordPayload::issuance(&cert),
            KeyLocator::Root(self.id.clone()),
            &self.keys,
            rng,
        )?;
        Ok(rec)
    }

    /// Creates a revocation record pointing back at the previous revocation.
    pub fn revoke_certificate(
        &mut self,
        ledger: &Ledger,
        cert: &RecordName,
        reason: &str,
        rng: &mut dyn RngCore,
    ) -> Result<Record, IdentityError> {
        match ledger.identity().certificate(cert) {
            Some((_, true)) => {}
            _ => return Err(IdentityError::UnknownCert(cert.clone())),
        }
        let prev = self
            .last_revocation
            .clone()
            .or_else(|| ledger.identity().latest_revocation().cloned());
        let notice = RevocationNotice { revoked_cert: cert.clone(), reason: reason.to_owned() };
        let rec = ledger.create_record(
            &self.id,
            RecordPayload::revocation(&notice, prev),
            KeyLocator::Root(self.id.clone()),
            &self.keys,
            rng,
        )?;
        self.last_revocation = Some(rec.name.clone());
        Ok(rec)
    }
}
