//! Hand-built ledgers for integration tests.

#![allow(dead_code)]

pub mod bench;
pub mod dag;

use std::sync::Arc;

use dledger::crypto::{derive_seed, KeyPair, KeyedMacProvider, SignatureProvider};
use dledger::identity::IdentityManager;
use dledger::ledger::{Arrival, Ledger, LedgerConfig, Verdict};
use dledger::record::{EntityId, KeyLocator, Record, RecordName, RecordPayload, UnsignedRecord};

/// `n` certified entities named `e0..`, one genesis record each.
pub struct World {
    pub provider: Arc<dyn SignatureProvider>,
    pub idm: IdentityManager,
    pub ids: Vec<EntityId>,
    pub keys: Vec<KeyPair>,
    pub genesis: Vec<Arc<Record>>,
}

impl World {
    pub fn new(n: usize) -> World {
        World::with_provider(n, Arc::new(KeyedMacProvider::new(derive_seed(7, "shared"))))
    }

    pub fn with_provider(n: usize, provider: Arc<dyn SignatureProvider>) -> World {
        let idm_id = EntityId::new("idm").unwrap();
        let idm = IdentityManager::new(idm_id, provider.keypair_from_seed(&derive_seed(7, "idm")), provider.clone());
        let ids: Vec<EntityId> = (0..n).map(|i| EntityId::new(format!("e{i}")).unwrap()).collect();
        let keys: Vec<KeyPair> = (0..n).map(|i| provider.keypair_from_seed(&derive_seed(7, &format!("e{i}")))).collect();
        let certs: Vec<_> = ids.iter().zip(&keys).map(|(id, k)| idm.certificate_for(id.clone(), k.public.clone())).collect();
        let genesis = idm.genesis(&certs, n.max(2));
        World { provider, idm, ids, keys, genesis }
    }

    pub fn ledger(&self, config: LedgerConfig) -> Ledger {
        let mut l = Ledger::new(config, self.provider.clone(), self.idm.trust_store()).unwrap();
        l.bootstrap(&self.genesis).unwrap();
        l
    }

    pub fn locator(&self, who: usize) -> KeyLocator {
        KeyLocator::Cert(self.genesis[who].name.clone())
    }

    /// A validly signed application record by entity `who`.
    pub fn record(&self, who: usize, approved: Vec<RecordName>, body: &[u8]) -> Arc<Record> {
        let rec = UnsignedRecord {
            generator: self.ids[who].clone(),
            approved,
            payload: RecordPayload::application(body.to_vec()),
            signer_key: self.locator(who),
        }
        .sign(self.provider.as_ref(), &self.keys[who], usize::MAX)
        .unwrap();
        Arc::new(rec)
    }

    pub fn g(&self, i: usize) -> RecordName {
        self.genesis[i].name.clone()
    }
}

/// Admits `rec` and insists it is stored.
pub fn accept(ledger: &mut Ledger, rec: &Arc<Record>, arrival: Arrival) {
    let adm = ledger.admit(rec.clone(), arrival, 0.0);
    assert_eq!(adm.verdict, Verdict::Accepted, "{}", rec.name);
}
