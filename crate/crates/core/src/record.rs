//! Records, names and identity payloads, with their canonical encoding.
//!
//! A record is named `/DLedger/<generator>/<digest>` where the digest is the
//! SHA-256 of the record's canonical content encoding. The proof of
//! authentication (PoA) is a signature over the rendered name, so any party
//! holding only the name can check it, and the digest inside the name binds the
//! signature to every content byte.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::crypto::{KeyPair, PublicKey, Signature, SignatureProvider};
use crate::tlv::{read_str, read_u32, read_u64, TlvReader, TlvWriter};

/// First component of every ledger name.
pub const NAME_ROOT: &str = "DLedger";
/// Component inserted after the root in notification names.
pub const NOTIF_COMPONENT: &str = "NOTIF";
/// Component inserted after the root in synchronization names.
pub const SYNC_COMPONENT: &str = "SYNC";
pub const DIGEST_LEN: usize = 32;
pub const DEFAULT_MAX_PAYLOAD: usize = 8 * 1024;

mod ty {
    pub const GENERATOR: u8 = 0x01;
    pub const APPROVED: u8 = 0x02;
    pub const KIND: u8 = 0x03;
    pub const BODY: u8 = 0x04;
    pub const PREV_REVOCATION: u8 = 0x05;
    pub const KEY_LOCATOR: u8 = 0x06;
    pub const NAME: u8 = 0x07;
    pub const DIGEST: u8 = 0x08;
    pub const POA: u8 = 0x09;
    pub const ROOT_KEY: u8 = 0x0A;

    pub const CERT_SUBJECT: u8 = 0x11;
    pub const CERT_PUBLIC_KEY: u8 = 0x12;
    pub const CERT_ISSUER: u8 = 0x13;
    pub const CERT_NOT_BEFORE: u8 = 0x14;
    pub const CERT_NOT_AFTER: u8 = 0x15;

    pub const REVOKED_CERT: u8 = 0x21;
    pub const REVOKE_REASON: u8 = 0x22;

    pub const SYNC_SEQ: u8 = 0x31;
    pub const SYNC_TOTAL: u8 = 0x32;
    pub const SYNC_NAMES: u8 = 0x33;
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecordError {
    #[error("invalid entity id {0:?}")]
    InvalidEntityId(String),
    #[error("invalid record name {0:?}")]
    InvalidName(String),
    #[error("payload body of {len} bytes exceeds the {max} byte limit")]
    OversizePayload { len: usize, max: usize },
    #[error("malformed encoding: {0}")]
    Malformed(&'static str),
    #[error("approved list contains {0} twice")]
    DuplicateApproval(RecordName),
    #[error("payload kind and body disagree: {0}")]
    PayloadMismatch(&'static str),
}

/// Unique identity label of a ledger participant, one name component.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(Arc<str>);

impl EntityId {
    pub fn new(label: impl AsRef<str>) -> Result<Self, RecordError> {
        let label = label.as_ref();
        if label.is_empty()
            || label.contains('/')
            || label == NOTIF_COMPONENT
            || label == SYNC_COMPONENT
        {
            return Err(RecordError::InvalidEntityId(label.to_owned()));
        }
        Ok(EntityId(Arc::from(label)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl FromStr for EntityId {
    type Err = RecordError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityId::new(s)
    }
}

/// SHA-256 output used for record digests.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Digest {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        if s.len() != DIGEST_LEN * 2 || s.bytes().any(|b| b.is_ascii_uppercase()) {
            return None;
        }
        let mut out = [0u8; DIGEST_LEN];
        hex::decode_to_slice(s, &mut out).ok()?;
        Some(Digest(out))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..", &self.to_hex()[..8])
    }
}

/// `/DLedger/<generator>/<digest hex>`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordName {
    generator: EntityId,
    digest: Digest,
}

impl RecordName {
    pub fn new(generator: EntityId, digest: Digest) -> Self {
        RecordName { generator, digest }
    }

    pub fn generator(&self) -> &EntityId {
        &self.generator
    }

    pub fn digest(&self) -> &Digest {
        &self.digest
    }

    /// Name of the notification Interest that announces this record.
    pub fn notif_name(&self) -> String {
        format!(
            "/{}/{}/{}/{}",
            NAME_ROOT,
            NOTIF_COMPONENT,
            self.generator,
            self.digest.to_hex()
        )
    }

    /// Inverse of [`RecordName::notif_name`]: drops the `NOTIF` component.
    pub fn from_notif_name(s: &str) -> Result<RecordName, RecordError> {
        let prefix = format!("/{}/{}/", NAME_ROOT, NOTIF_COMPONENT);
        let rest = s
            .strip_prefix(&prefix)
            .ok_or_else(|| RecordError::InvalidName(s.to_owned()))?;
        format!("/{}/{}", NAME_ROOT, rest).parse()
    }
}

impl fmt::Display for RecordName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "/{}/{}/{}", NAME_ROOT, self.generator, self.digest.to_hex())
    }
}

impl fmt::Debug for RecordName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "/{}/{}/{:?}", NAME_ROOT, self.generator, self.digest)
    }
}

impl FromStr for RecordName {
    type Err = RecordError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RecordError::InvalidName(s.to_owned());
        let mut parts = s.strip_prefix('/').ok_or_else(bad)?.split('/');
        if parts.next() != Some(NAME_ROOT) {
            return Err(bad());
        }
        let generator = EntityId::new(parts.next().ok_or_else(bad)?).map_err(|_| bad())?;
        let digest = Digest::from_hex(parts.next().ok_or_else(bad)?).ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(RecordName { generator, digest })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum PayloadKind {
    Application = 0,
    CertIssuance = 1,
    CertRevocation = 2,
    Genesis = 3,
}

impl PayloadKind {
    fn from_byte(b: u8) -> Result<Self, RecordError> {
        Ok(match b {
            0 => PayloadKind::Application,
            1 => PayloadKind::CertIssuance,
            2 => PayloadKind::CertRevocation,
            3 => PayloadKind::Genesis,
            _ => return Err(RecordError::Malformed("unknown payload kind")),
        })
    }
}

/// Certificate binding an entity to a public key, issued by an identity manager.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Certificate {
    pub subject: EntityId,
    pub public_key: PublicKey,
    pub issuer: EntityId,
    /// Validity window in whole simulation seconds, inclusive.
    pub not_before: u64,
    pub not_after: u64,
}

impl Certificate {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = TlvWriter::new();
        w.put(ty::CERT_SUBJECT, self.subject.as_str().as_bytes())
            .put(ty::CERT_PUBLIC_KEY, &self.public_key.0)
            .put(ty::CERT_ISSUER, self.issuer.as_str().as_bytes())
            .put_u64(ty::CERT_NOT_BEFORE, self.not_before)
            .put_u64(ty::CERT_NOT_AFTER, self.not_after);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, RecordError> {
        let mut r = TlvReader::new(bytes);
        let subject = EntityId::new(read_str(r.expect(ty::CERT_SUBJECT, "certificate subject")?)?)?;
        let public_key = PublicKey(r.expect(ty::CERT_PUBLIC_KEY, "certificate key")?.to_vec());
        let issuer = EntityId::new(read_str(r.expect(ty::CERT_ISSUER, "certificate issuer")?)?)?;
        let not_before = read_u64(r.expect(ty::CERT_NOT_BEFORE, "certificate not-before")?)?;
        let not_after = read_u64(r.expect(ty::CERT_NOT_AFTER, "certificate not-after")?)?;
        r.finish()?;
        Ok(Certificate { subject, public_key, issuer, not_before, not_after })
    }

    pub fn valid_at(&self, secs: f64) -> bool {
        secs >= self.not_before as f64 && secs <= self.not_after as f64
    }
}

/// Notice carried by a revocation record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RevocationNotice {
    pub revoked_cert: RecordName,
    pub reason: String,
}

impl RevocationNotice {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = TlvWriter::new();
        w.nested(ty::REVOKED_CERT, |w| put_name(w, &self.revoked_cert))
            .put(ty::REVOKE_REASON, self.reason.as_bytes());
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, RecordError> {
        let mut r = TlvReader::new(bytes);
        let revoked_cert = read_name_element(r.expect(ty::REVOKED_CERT, "revoked certificate")?)?;
        let reason = read_str(r.expect(ty::REVOKE_REASON, "revocation reason")?)?.to_owned();
        r.finish()?;
        Ok(RevocationNotice { revoked_cert, reason })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordPayload {
    pub kind: PayloadKind,
    pub body: Vec<u8>,
    /// Back-pointer to the previous revocation; present iff `kind` is
    /// [`PayloadKind::CertRevocation`].
    pub prev_revocation: Option<RecordName>,
}

impl RecordPayload {
    pub fn application(body: impl Into<Vec<u8>>) -> Self {
        RecordPayload { kind: PayloadKind::Application, body: body.into(), prev_revocation: None }
    }

    pub fn issuance(cert: &Certificate) -> Self {
        RecordPayload { kind: PayloadKind::CertIssuance, body: cert.encode(), prev_revocation: None }
    }

    pub fn revocation(notice: &RevocationNotice, prev: Option<RecordName>) -> Self {
        RecordPayload {
            kind: PayloadKind::CertRevocation,
            body: notice.encode(),
            prev_revocation: prev,
        }
    }

    /// Genesis records carry the bootstrap certificate of one entity, or an
    /// opaque marker when more genesis records than entities are needed.
    pub fn genesis(cert: Option<&Certificate>, marker: &[u8]) -> Self {
        RecordPayload {
            kind: PayloadKind::Genesis,
            body: cert.map(Certificate::encode).unwrap_or_else(|| marker.to_vec()),
            prev_revocation: None,
        }
    }

    /// Certificate carried by issuance or genesis payloads.
    pub fn certificate(&self) -> Option<Certificate> {
        match self.kind {
            PayloadKind::CertIssuance => Certificate::decode(&self.body).ok(),
            PayloadKind::Genesis => Certificate::decode(&self.body).ok(),
            _ => None,
        }
    }

    pub fn revocation_notice(&self) -> Option<RevocationNotice> {
        match self.kind {
            PayloadKind::CertRevocation => RevocationNotice::decode(&self.body).ok(),
            _ => None,
        }
    }

    fn check(&self) -> Result<(), RecordError> {
        match self.kind {
            PayloadKind::CertRevocation => {
                RevocationNotice::decode(&self.body)
                    .map_err(|_| RecordError::PayloadMismatch("revocation body"))?;
            }
            PayloadKind::CertIssuance => {
                Certificate::decode(&self.body)
                    .map_err(|_| RecordError::PayloadMismatch("issuance body"))?;
            }
            _ => {}
        }
        if self.prev_revocation.is_some() && self.kind != PayloadKind::CertRevocation {
            return Err(RecordError::PayloadMismatch("back-pointer on a non-revocation record"));
        }
        Ok(())
    }
}

/// Which key signed a record: a manager root installed out of band, or the
/// certificate carried by a ledger record.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum KeyLocator {
    Root(EntityId),
    Cert(RecordName),
}

impl KeyLocator {
    fn put(&self, w: &mut TlvWriter) {
        w.nested(ty::KEY_LOCATOR, |w| match self {
            KeyLocator::Root(id) => {
                w.put(ty::ROOT_KEY, id.as_str().as_bytes());
            }
            KeyLocator::Cert(name) => put_name(w, name),
        });
    }

    fn read(value: &[u8]) -> Result<Self, RecordError> {
        let mut loc = TlvReader::new(value);
        let key = match loc.next()? {
            (ty::ROOT_KEY, v) => KeyLocator::Root(EntityId::new(read_str(v)?)?),
            (ty::NAME, v) => KeyLocator::Cert(read_name_fields(v)?),
            _ => return Err(RecordError::Malformed("key locator")),
        };
        loc.finish()?;
        Ok(key)
    }
}

/// Everything in a record except the derived name and the PoA.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnsignedRecord {
    pub generator: EntityId,
    pub approved: Vec<RecordName>,
    pub payload: RecordPayload,
    pub signer_key: KeyLocator,
}

impl UnsignedRecord {
    /// Canonical, deterministic content encoding. Fields are written in fixed
    /// order: generator, approved names as given, payload kind, payload body,
    /// optional revocation back-pointer, key locator.
    pub fn encode(&self, max_payload: usize) -> Result<Vec<u8>, RecordError> {
        if self.payload.body.len() > max_payload {
            return Err(RecordError::OversizePayload { len: self.payload.body.len(), max: max_payload });
        }
        for (i, a) in self.approved.iter().enumerate() {
            if self.approved[..i].contains(a) {
                return Err(RecordError::DuplicateApproval(a.clone()));
            }
        }
        self.payload.check()?;
        let mut w = TlvWriter::new();
        w.put(ty::GENERATOR, self.generator.as_str().as_bytes());
        w.nested(ty::APPROVED, |w| {
            for name in &self.approved {
                put_name(w, name);
            }
        });
        w.put(ty::KIND, &[self.payload.kind as u8]);
        w.put(ty::BODY, &self.payload.body);
        if let Some(prev) = &self.payload.prev_revocation {
            w.nested(ty::PREV_REVOCATION, |w| put_name(w, prev));
        }
        self.signer_key.put(&mut w);
        Ok(w.finish())
    }

    pub fn decode(bytes: &[u8], max_payload: usize) -> Result<Self, RecordError> {
        let mut r = TlvReader::new(bytes);
        let generator = EntityId::new(read_str(r.expect(ty::GENERATOR, "generator")?)?)?;
        let mut approved = Vec::new();
        let mut list = TlvReader::new(r.expect(ty::APPROVED, "approved list")?);
        while !list.is_empty() {
            approved.push(read_name_fields(list.expect(ty::NAME, "approved name")?)?);
        }
        let kind = match r.expect(ty::KIND, "payload kind")? {
            [b] => PayloadKind::from_byte(*b)?,
            _ => return Err(RecordError::Malformed("payload kind must be one octet")),
        };
        let body = r.expect(ty::BODY, "payload body")?.to_vec();
        if body.len() > max_payload {
            return Err(RecordError::OversizePayload { len: body.len(), max: max_payload });
        }
        let prev_revocation = r.optional(ty::PREV_REVOCATION)?.map(read_name_element).transpose()?;
        let signer_key = KeyLocator::read(r.expect(ty::KEY_LOCATOR, "key locator")?)?;
        r.finish()?;
        let rec = UnsignedRecord {
            generator,
            approved,
            payload: RecordPayload { kind, body, prev_revocation },
            signer_key,
        };
        // Re-encoding rejects duplicates and kind/body mismatches, and proves
        // the input was in canonical form.
        if rec.encode(max_payload)? != bytes {
            return Err(RecordError::Malformed("non-canonical encoding"));
        }
        Ok(rec)
    }

    /// Names, then signs the record.
    pub fn sign(
        self,
        provider: &dyn SignatureProvider,
        keys: &KeyPair,
        max_payload: usize,
    ) -> Result<Record, RecordError> {
        let encoding = self.encode(max_payload)?;
        let name = compute_name(&self.generator, &encoding);
        let poa = provider.sign(keys, name.to_string().as_bytes());
        Ok(Record {
            name,
            approved: self.approved,
            payload: self.payload,
            poa,
            signer_key: self.signer_key,
        })
    }
}

/// Digest over a canonical encoding, rendered under the generator's prefix.
pub fn compute_name(generator: &EntityId, encoding: &[u8]) -> RecordName {
    RecordName::new(generator.clone(), Digest::of(encoding))
}

/// A signed DAG vertex.
///
/// `name` is derived from the other fields; [`Record::name_binding_holds`]
/// recomputes it, so a record whose fields were altered after signing is
/// detected even though the struct fields are public.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub name: RecordName,
    pub approved: Vec<RecordName>,
    pub payload: RecordPayload,
    pub poa: Signature,
    pub signer_key: KeyLocator,
}

impl Record {
    pub fn generator(&self) -> &EntityId {
        self.name.generator()
    }

    pub fn unsigned(&self) -> UnsignedRecord {
        UnsignedRecord {
            generator: self.name.generator().clone(),
            approved: self.approved.clone(),
            payload: self.payload.clone(),
            signer_key: self.signer_key.clone(),
        }
    }

    /// Canonical content bytes (what the digest covers).
    pub fn content(&self) -> Vec<u8> {
        self.unsigned()
            .encode(usize::MAX)
            .expect("a constructed record always encodes")
    }

    /// Recomputes the digest over the current field values.
    pub fn name_binding_holds(&self) -> bool {
        match self.unsigned().encode(usize::MAX) {
            Ok(enc) => compute_name(self.name.generator(), &enc) == self.name,
            Err(_) => false,
        }
    }

    /// Checks name binding, then the PoA under `public`.
    pub fn verify_poa(&self, provider: &dyn SignatureProvider, public: &PublicKey) -> bool {
        self.name_binding_holds() && poa_matches_name(provider, &self.name, &self.poa, public)
    }

    /// Content plus PoA, the form records travel in and are dumped as.
    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = self.content();
        let mut w = TlvWriter::new();
        w.put(ty::POA, &self.poa.0);
        out.extend_from_slice(&w.finish());
        out
    }

    pub fn from_wire(bytes: &[u8], max_payload: usize) -> Result<Record, RecordError> {
        // The PoA is the final element; locate it by walking the elements.
        let mut r = TlvReader::new(bytes);
        let mut content_end = 0;
        let mut poa = None;
        while !r.is_empty() {
            let (t, v) = r.next()?;
            if t == ty::POA {
                poa = Some(v);
                r.finish()?;
                break;
            }
            content_end += crate::tlv::HEADER_LEN + v.len();
        }
        let poa = poa.ok_or(RecordError::Malformed("missing PoA"))?;
        Record::from_parts(&bytes[..content_end], poa, max_payload)
    }

    /// Rebuilds a record from canonical content and its PoA, deriving the name.
    pub fn from_parts(content: &[u8], poa: &[u8], max_payload: usize) -> Result<Record, RecordError> {
        let unsigned = UnsignedRecord::decode(content, max_payload)?;
        let name = compute_name(&unsigned.generator, content);
        Ok(Record {
            name,
            approved: unsigned.approved,
            payload: unsigned.payload,
            poa: Signature(poa.to_vec()),
            signer_key: unsigned.signer_key,
        })
    }
}

/// Verifies a PoA knowing only the record name, as a notification receiver does.
pub fn poa_matches_name(
    provider: &dyn SignatureProvider,
    name: &RecordName,
    poa: &Signature,
    public: &PublicKey,
) -> bool {
    provider.verify(public, name.to_string().as_bytes(), poa)
}

fn put_name(w: &mut TlvWriter, name: &RecordName) {
    w.nested(ty::NAME, |w| {
        w.put(ty::GENERATOR, name.generator.as_str().as_bytes());
        w.put(ty::DIGEST, &name.digest.0);
    });
}

fn read_name_fields(value: &[u8]) -> Result<RecordName, RecordError> {
    let mut r = TlvReader::new(value);
    let generator = EntityId::new(read_str(r.expect(ty::GENERATOR, "name generator")?)?)?;
    let digest: [u8; DIGEST_LEN] = r
        .expect(ty::DIGEST, "name digest")?
        .try_into()
        .map_err(|_| RecordError::Malformed("digest must be 32 octets"))?;
    r.finish()?;
    Ok(RecordName::new(generator, Digest(digest)))
}

fn read_name_element(value: &[u8]) -> Result<RecordName, RecordError> {
    let mut r = TlvReader::new(value);
    let name = read_name_fields(r.expect(ty::NAME, "name element")?)?;
    r.finish()?;
    Ok(name)
}

/// Parameter of a notification Interest: the new record's PoA and the
/// locator of the key that verifies it.
pub fn encode_notif_parameter(poa: &Signature, signer_key: &KeyLocator) -> Vec<u8> {
    let mut w = TlvWriter::new();
    w.put(ty::POA, &poa.0);
    signer_key.put(&mut w);
    w.finish()
}

pub fn decode_notif_parameter(bytes: &[u8]) -> Result<(Signature, KeyLocator), RecordError> {
    let mut r = TlvReader::new(bytes);
    let poa = Signature(r.expect(ty::POA, "notification PoA")?.to_vec());
    let key = KeyLocator::read(r.expect(ty::KEY_LOCATOR, "key locator")?)?;
    r.finish()?;
    Ok((poa, key))
}

/// One piece of a synchronization Interest parameter. Large tailing lists are
/// split into several chunks sharing one digest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyncChunk {
    pub seq: u32,
    pub total: u32,
    pub names: Vec<RecordName>,
}

impl SyncChunk {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = TlvWriter::new();
        w.put_u32(ty::SYNC_SEQ, self.seq);
        w.put_u32(ty::SYNC_TOTAL, self.total);
        w.nested(ty::SYNC_NAMES, |w| {
            for n in &self.names {
                put_name(w, n);
            }
        });
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, RecordError> {
        let mut r = TlvReader::new(bytes);
        let seq = read_u32(r.expect(ty::SYNC_SEQ, "sync sequence")?)?;
        let total = read_u32(r.expect(ty::SYNC_TOTAL, "sync total")?)?;
        let mut list = TlvReader::new(r.expect(ty::SYNC_NAMES, "sync names")?);
        r.finish()?;
        if total == 0 || seq >= total {
            return Err(RecordError::Malformed("sync sequence out of range"));
        }
        let mut names = Vec::new();
        while !list.is_empty() {
            names.push(read_name_fields(list.expect(ty::NAME, "sync name")?)?);
        }
        Ok(SyncChunk { seq, total, names })
    }

    /// Encoded size of one name inside a chunk.
    pub fn name_cost(name: &RecordName) -> usize {
        // NAME header + GENERATOR element + DIGEST element.
        3 * crate::tlv::HEADER_LEN + name.generator.as_str().len() + DIGEST_LEN
    }

    /// Fixed overhead of a chunk besides its names.
    pub const OVERHEAD: usize = 3 * crate::tlv::HEADER_LEN + 8;
}

/// Digest of a tailing set: SHA-256 over the length-prefixed (u32 big-endian)
/// rendered names, in sorted order.
pub fn tailing_digest(names: &[RecordName]) -> Digest {
    let mut rendered: Vec<String> = names.iter().map(|n| n.to_string()).collect();
    rendered.sort();
    let mut h = Sha256::new();
    for r in &rendered {
        h.update((r.len() as u32).to_be_bytes());
        h.update(r.as_bytes());
    }
    Digest(h.finalize().into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{Ed25519Provider, KeyedMacProvider};

    fn id(s: &str) -> EntityId {
        EntityId::new(s).unwrap()
    }

    fn name(g: &str, b: u8) -> RecordName {
        RecordName::new(id(g), Digest([b; 32]))
    }

    fn sample(approved: Vec<RecordName>) -> UnsignedRecord {
        UnsignedRecord {
            generator: id("gtw-node0"),
            approved,
            payload: RecordPayload::application(b"kWh=3.2".to_vec()),
            signer_key: KeyLocator::Cert(name("idm", 9)),
        }
    }

    #[test]
    fn entity_ids_reject_separators_and_reserved_words() {
        assert!(EntityId::new("").is_err());
        assert!(EntityId::new("a/b").is_err());
        assert!(EntityId::new("NOTIF").is_err());
        assert!(EntityId::new("SYNC").is_err());
        assert!(EntityId::new("gtw-node0").is_ok());
    }

    #[test]
    fn rendered_name_has_three_components() {
        let enc = sample(vec![name("a", 1), name("b", 2)]).encode(DEFAULT_MAX_PAYLOAD).unwrap();
        let n = compute_name(&id("gtw-node0"), &enc);
        let s = n.to_string();
        assert!(s.starts_with("/DLedger/gtw-node0/"));
        assert_eq!(s.split('/').count(), 4);
        let hex = s.rsplit('/').next().unwrap();
        assert_eq!(hex.len(), 64);
        assert!(hex.chars().all(|c| c.is_ascii_digit() || ('a'..='f').contains(&c)));
        assert_eq!(s.parse::<RecordName>().unwrap(), n);
    }

    #[test]
    fn name_parser_rejects_bad_shapes() {
        for bad in [
            "DLedger/a/00",
            "/Other/a/".to_string().as_str(),
            "/DLedger/a",
            "/DLedger/a/zz",
            &format!("/DLedger/a/{}", "AB".repeat(32)),
            &format!("/DLedger/a/{}/x", "ab".repeat(32)),
        ] {
            assert!(bad.parse::<RecordName>().is_err(), "{bad}");
        }
    }

    #[test]
    fn notif_name_drops_to_record_name() {
        let n = name("gtw-node0", 0xf4);
        let notif = n.notif_name();
        assert!(notif.starts_with("/DLedger/NOTIF/gtw-node0/"));
        assert_eq!(RecordName::from_notif_name(&notif).unwrap(), n);
        assert_eq!(notif.replacen("/NOTIF", "", 1), n.to_string());
    }

    #[test]
    fn encoding_is_deterministic_and_field_sensitive() {
        let a = sample(vec![name("a", 1), name("b", 2)]);
        let b = sample(vec![name("a", 1), name("b", 2)]);
        assert_eq!(a.encode(DEFAULT_MAX_PAYLOAD).unwrap(), b.encode(DEFAULT_MAX_PAYLOAD).unwrap());
        let c = sample(vec![name("a", 1), name("b", 3)]);
        assert_ne!(a.encode(DEFAULT_MAX_PAYLOAD).unwrap(), c.encode(DEFAULT_MAX_PAYLOAD).unwrap());
    }

    #[test]
    fn oversize_payload_is_rejected() {
        let mut r = sample(vec![name("a", 1), name("b", 2)]);
        r.payload.body = vec![0; DEFAULT_MAX_PAYLOAD + 1];
        assert_eq!(
            r.encode(DEFAULT_MAX_PAYLOAD),
            Err(RecordError::OversizePayload { len: DEFAULT_MAX_PAYLOAD + 1, max: DEFAULT_MAX_PAYLOAD })
        );
        r.payload.body.pop();
        assert!(r.encode(DEFAULT_MAX_PAYLOAD).is_ok());
    }

    #[test]
    fn duplicate_approvals_are_rejected() {
        let r = sample(vec![name("a", 1), name("a", 1)]);
        assert!(matches!(r.encode(DEFAULT_MAX_PAYLOAD), Err(RecordError::DuplicateApproval(_))));
    }

    #[test]
    fn flipping_one_bit_changes_the_digest() {
        let enc = sample(vec![name("a", 1), name("b", 2)]).encode(DEFAULT_MAX_PAYLOAD).unwrap();
        let base = Digest::of(&enc);
        for byte in [0, enc.len() / 2, enc.len() - 1] {
            let mut m = enc.clone();
            m[byte] ^= 0x01;
            let d = Digest::of(&m);
            assert_ne!(d, base);
            // Avalanche: roughly half the output bits move.
            let moved: u32 = d.0.iter().zip(base.0.iter()).map(|(x, y)| (x ^ y).count_ones()).sum();
            assert!((64..=192).contains(&moved), "only {moved} bits changed");
        }
    }

    #[test]
    fn sign_then_verify_under_both_schemes() {
        let providers: [Box<dyn SignatureProvider>; 2] =
            [Box::new(Ed25519Provider), Box::new(KeyedMacProvider::new([7; 32]))];
        for p in providers.iter() {
            let keys = p.keypair_from_seed(&[1; 32]);
            let other = p.keypair_from_seed(&[2; 32]);
            let rec = sample(vec![name("a", 1), name("b", 2)])
                .sign(p.as_ref(), &keys, DEFAULT_MAX_PAYLOAD)
                .unwrap();
            assert!(rec.verify_poa(p.as_ref(), &keys.public));
            assert!(!rec.verify_poa(p.as_ref(), &other.public));
            let mut tampered = rec.clone();
            tampered.payload.body[0] ^= 1;
            assert!(!tampered.verify_poa(p.as_ref(), &keys.public));
        }
    }

    #[test]
    fn wire_round_trip_keeps_the_name() {
        let p = KeyedMacProvider::new([3; 32]);
        let keys = p.keypair_from_seed(&[4; 32]);
        let notice = RevocationNotice { revoked_cert: name("idm", 5), reason: "spam".into() };
        let rec = UnsignedRecord {
            generator: id("idm"),
            approved: vec![name("a", 1), name("b", 2)],
            payload: RecordPayload::revocation(&notice, Some(name("idm", 6))),
            signer_key: KeyLocator::Root(id("idm")),
        }
        .sign(&p, &keys, DEFAULT_MAX_PAYLOAD)
        .unwrap();
        let back = Record::from_wire(&rec.to_wire(), DEFAULT_MAX_PAYLOAD).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.payload.revocation_notice().unwrap(), notice);
    }

    #[test]
    fn back_pointer_only_on_revocations() {
        let mut r = sample(vec![name("a", 1), name("b", 2)]);
        r.payload.prev_revocation = Some(name("idm", 1));
        assert!(matches!(r.encode(DEFAULT_MAX_PAYLOAD), Err(RecordError::PayloadMismatch(_))));
    }

    #[test]
    fn issuance_body_must_decode_as_certificate() {
        let mut r = sample(vec![name("a", 1), name("b", 2)]);
        r.payload.kind = PayloadKind::CertIssuance;
        assert!(matches!(r.encode(DEFAULT_MAX_PAYLOAD), Err(RecordError::PayloadMismatch(_))));
    }

    #[test]
    fn trailing_garbage_fails_decode() {
        let enc = sample(vec![name("a", 1), name("b", 2)]).encode(DEFAULT_MAX_PAYLOAD).unwrap();
        let mut bad = enc.clone();
        bad.push(0);
        assert!(UnsignedRecord::decode(&bad, DEFAULT_MAX_PAYLOAD).is_err());
        assert!(UnsignedRecord::decode(&enc[..enc.len() - 1], DEFAULT_MAX_PAYLOAD).is_err());
    }
}
