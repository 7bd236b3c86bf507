mod common;

use std::sync::Arc;

use common::{accept, World};
use dledger::crypto::derive_seed;
use dledger::identity::{IdentityError, ResolveError, RevocationStatus};
use dledger::ledger::{Arrival, Ledger, LedgerConfig, RejectReason, Verdict};
use dledger::record::{
    Digest, EntityId, KeyLocator, PayloadKind, Record, RecordName, RecordPayload, UnsignedRecord,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Fixture {
    w: World,
    l: Ledger,
    rng: ChaCha8Rng,
    tick: u32,
    /// Everything added so far, newest last.
    seen: Vec<RecordName>,
}

impl Fixture {
    fn new() -> Fixture {
        let w = World::new(4);
        let mut config = LedgerConfig::new(2, 3);
        config.w_contribution = 2;
        let mut l = w.ledger(config);
        // Genesis records are the manager's own, so it needs foreign tips to approve.
        let a = w.record(0, vec![w.g(0), w.g(1)], b"seed-a");
        let b = w.record(1, vec![w.g(2), w.g(3)], b"seed-b");
        accept(&mut l, &a, Arrival::Tailing);
        accept(&mut l, &b, Arrival::Tailing);
        Fixture { w, l, rng: ChaCha8Rng::seed_from_u64(9), tick: 0, seen: vec![a.name.clone(), b.name.clone()] }
    }

    /// Records from e0, e1 and e2 that each approve `target`, confirming it at W=3.
    fn confirm(&mut self, target: &RecordName) {
        let other = self.pick(&self.w.ids[0].clone(), 1, Some(target)).remove(0);
        self.tick += 1;
        let a = self.w.record(0, vec![target.clone(), other], format!("a{}", self.tick).as_bytes());
        accept(&mut self.l, &a, Arrival::Backfill);
        let b = self.w.record(1, vec![target.clone(), a.name.clone()], format!("b{}", self.tick).as_bytes());
        accept(&mut self.l, &b, Arrival::Backfill);
        let c = self.w.record(2, vec![target.clone(), b.name.clone()], format!("c{}", self.tick).as_bytes());
        accept(&mut self.l, &c, Arrival::Backfill);
        self.seen.extend([a.name.clone(), b.name.clone(), c.name.clone()]);
        assert!(self.l.is_confirmed(target));
    }

    /// `n` records not generated by `who`: tips first, then the newest others.
    fn pick(&self, who: &EntityId, n: usize, skip: Option<&RecordName>) -> Vec<RecordName> {
        let mut out: Vec<RecordName> = Vec::new();
        for c in self.l.tailing_names().into_iter().chain(self.seen.iter().rev().cloned()) {
            if out.len() < n && c.generator() != who && Some(&c) != skip && !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }

    fn signed_by(&self, who: &EntityId, key: &dledger::crypto::KeyPair, cert: &RecordName) -> Arc<Record> {
        Arc::new(
            UnsignedRecord {
                generator: who.clone(),
                approved: self.pick(who, 2, None),
                payload: RecordPayload::application(b"hello".to_vec()),
                signer_key: KeyLocator::Cert(cert.clone()),
            }
            .sign(self.w.provider.as_ref(), key, usize::MAX)
            .unwrap(),
        )
    }

    fn newcomer(&mut self) -> (EntityId, dledger::crypto::KeyPair, RecordName) {
        let id = EntityId::new("newbie").unwrap();
        let keys = self.w.provider.keypair_from_seed(&derive_seed(7, "newbie"));
        let rec = self.w.idm.issue_certificate(&self.l, id.clone(), keys.public.clone(), &mut self.rng).unwrap();
        let name = rec.name.clone();
        self.seen.push(name.clone());
        accept(&mut self.l, &Arc::new(rec), Arrival::Local);
        (id, keys, name)
    }
}

#[test]
fn a_new_entity_can_publish_once_its_certificate_is_confirmed() {
    let mut f = Fixture::new();
    let (id, keys, cert) = f.newcomer();
    let early = f.signed_by(&id, &keys, &cert);
    assert_eq!(f.l.admit(early, Arrival::Tailing, 1.0).verdict, Verdict::Rejected(RejectReason::CertNotConfirmed));
    assert_eq!(f.l.resolve_signer(&KeyLocator::Cert(cert.clone()), 1.0), Err(ResolveError::NotConfirmed));

    f.confirm(&cert);
    let later = f.signed_by(&id, &keys, &cert);
    assert_eq!(f.l.admit(later, Arrival::Tailing, 2.0).verdict, Verdict::Accepted);
    let signer = f.l.resolve_signer(&KeyLocator::Cert(cert), 2.0).unwrap();
    assert_eq!(signer.subject, id);
    assert_eq!(signer.public_key, keys.public);
}

#[test]
fn a_subject_with_a_valid_certificate_cannot_get_another() {
    let mut f = Fixture::new();
    let (id, keys, cert) = f.newcomer();
    f.confirm(&cert);
    let again = f.w.idm.issue_certificate(&f.l, id.clone(), keys.public.clone(), &mut f.rng);
    assert!(matches!(again, Err(IdentityError::DuplicateSubject(s)) if s == id));
    // Genesis certificates count too.
    let e0 = f.w.ids[0].clone();
    let dup = f.w.idm.issue_certificate(&f.l, e0, keys.public, &mut f.rng);
    assert!(matches!(dup, Err(IdentityError::DuplicateSubject(_))));
}

#[test]
fn revocations_chain_and_take_effect_once_confirmed() {
    let mut f = Fixture::new();
    let (id, keys, cert) = f.newcomer();
    f.confirm(&cert);
    assert_eq!(f.l.revocation_status(&cert), RevocationStatus::Valid);

    let rev1 = f.w.idm.revoke_certificate(&f.l, &cert, "lost key", &mut f.rng).unwrap();
    assert_eq!(rev1.payload.prev_revocation, None);
    let rev1 = Arc::new(rev1);
    accept(&mut f.l, &rev1, Arrival::Local);
    assert_eq!(f.l.revocation_status(&cert), RevocationStatus::Valid, "unconfirmed revocations do not count");
    assert_eq!(f.l.admit(f.signed_by(&id, &keys, &cert), Arrival::Tailing, 3.0).verdict, Verdict::Accepted);

    f.confirm(&rev1.name);
    assert_eq!(f.l.revocation_status(&cert), RevocationStatus::Revoked(rev1.name.clone()));
    assert_eq!(
        f.l.admit(f.signed_by(&id, &keys, &cert), Arrival::Tailing, 4.0).verdict,
        Verdict::Rejected(RejectReason::CertRevoked)
    );
    assert_eq!(
        f.l.resolve_signer(&KeyLocator::Cert(cert.clone()), 4.0),
        Err(ResolveError::Revoked(rev1.name.clone()))
    );

    let e3_cert = f.w.g(3);
    let rev2 = Arc::new(f.w.idm.revoke_certificate(&f.l, &e3_cert, "retired", &mut f.rng).unwrap());
    assert_eq!(rev2.payload.prev_revocation.as_ref(), Some(&rev1.name));
    accept(&mut f.l, &rev2, Arrival::Local);
    f.confirm(&rev2.name);
    assert_eq!(f.l.latest_revocation(), Some(&rev2.name));
    // The older revocation is found by walking back from the newest.
    assert_eq!(f.l.revocation_status(&cert), RevocationStatus::Revoked(rev1.name.clone()));
    assert_eq!(f.l.revocation_status(&e3_cert), RevocationStatus::Revoked(rev2.name.clone()));
    assert_eq!(f.l.revocation_status(&f.w.g(2)), RevocationStatus::Valid);
}

#[test]
fn unknown_locators_do_not_resolve() {
    let mut f = Fixture::new();
    let ghost = RecordName::new(EntityId::new("idm").unwrap(), Digest([5; 32]));
    assert_eq!(f.l.resolve_signer(&KeyLocator::Cert(ghost.clone()), 0.0), Err(ResolveError::NotFound));
    assert_eq!(f.l.resolve_signer(&KeyLocator::Root(EntityId::new("mallory").unwrap()), 0.0), Err(ResolveError::NotFound));
    assert_eq!(f.l.revocation_status(&ghost), RevocationStatus::Unknown);
    assert!(matches!(
        f.w.idm.revoke_certificate(&f.l, &ghost, "x", &mut f.rng),
        Err(IdentityError::UnknownCert(_))
    ));
}

#[test]
fn only_a_manager_may_publish_identity_payloads() {
    let mut f = Fixture::new();
    let keys = f.w.provider.keypair_from_seed(&[4; 32]);
    let cert = f.w.idm.certificate_for(EntityId::new("sneaky").unwrap(), keys.public);
    let forged = Arc::new(
        UnsignedRecord {
            generator: f.w.ids[0].clone(),
            approved: vec![f.w.g(1), f.w.g(2)],
            payload: RecordPayload::issuance(&cert),
            signer_key: f.w.locator(0),
        }
        .sign(f.w.provider.as_ref(), &f.w.keys[0], usize::MAX)
        .unwrap(),
    );
    assert_eq!(f.l.admit(forged, Arrival::Tailing, 0.0).verdict, Verdict::Rejected(RejectReason::Unauthorized));
}

#[test]
fn every_honored_certificate_is_an_issuance_or_genesis_record() {
    let mut f = Fixture::new();
    let (id, keys, cert) = f.newcomer();
    f.confirm(&cert);
    let mine = f.signed_by(&id, &keys, &cert);
    accept(&mut f.l, &mine, Arrival::Tailing);
    for i in 0..3 {
        let r = f.l.create_record(
            &f.w.ids[i],
            RecordPayload::application(vec![i as u8]),
            f.w.locator(i),
            &f.w.keys[i],
            &mut f.rng,
        );
        if let Ok(r) = r {
            f.l.admit(Arc::new(r), Arrival::Local, 5.0);
        }
    }
    assert!(f.l.honored_certs().contains(&cert));
    for c in f.l.honored_certs() {
        let rec = f.l.get(c).expect("an honored certificate is stored");
        assert!(matches!(rec.payload.kind, PayloadKind::CertIssuance | PayloadKind::Genesis), "{c}");
        assert!(rec.payload.certificate().is_some());
    }
}
