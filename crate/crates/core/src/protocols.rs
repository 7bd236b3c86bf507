//! Per-peer protocol engine: publication, notification, fetching and
//! synchronization on top of a [`Ledger`].
//!
//! The daemon is driven by its host (the simulation harness or a test) through
//! four entry points: Interest and Data upcalls, timers, and link recovery. It
//! talks back through [`PeerIo`].

use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::{FxHashMap, FxHashSet};

use crate::crypto::{KeyPair, Signature};
use crate::identity::ResolveError;
use crate::ledger::{Admission, Arrival, Ledger, LedgerError, RejectReason, Verdict};
use crate::net::{DataPacket, Interest};
use crate::record::{
    decode_notif_parameter, encode_notif_parameter, poa_matches_name, tailing_digest, EntityId,
    KeyLocator, Record, RecordName, RecordPayload, SyncChunk, NAME_ROOT, NOTIF_COMPONENT,
    SYNC_COMPONENT,
};
use crate::time::{SimDuration, SimTime};

#[derive(Clone, Debug, PartialEq)]
pub struct PeerConfig {
    pub sync_interval: SimDuration,
    /// Waits before each retransmission of a fetch Interest; the fetch is
    /// abandoned when the last wait expires.
    pub retry_schedule: Vec<SimDuration>,
    pub sync_chunk_bytes: usize,
    /// Minimum gap between a peer's own Sync Interests when replying.
    pub reply_holdoff: SimDuration,
    /// Records younger than this are treated as still in flight when deciding
    /// whether a Sync sender is behind.
    pub settle: SimDuration,
}

impl Default for PeerConfig {
    fn default() -> Self {
        PeerConfig {
            sync_interval: SimDuration::from_secs(10),
            retry_schedule: vec![SimDuration::from_secs(1), SimDuration::from_secs(2), SimDuration::from_secs(4)],
            sync_chunk_bytes: 64 * 1024,
            reply_holdoff: SimDuration::from_secs(1),
            settle: SimDuration::from_secs(1),
        }
    }
}

/// What the daemon asks its host to do.
pub trait PeerIo {
    fn now(&self) -> SimTime;
    fn send_interest(&mut self, interest: Interest);
    fn send_data(&mut self, data: DataPacket);
    fn set_timer(&mut self, after: SimDuration, timer: PeerTimer);
    fn emit(&mut self, event: PeerEvent);
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PeerTimer {
    Sync,
    RecoverySync,
    FetchTimeout { name: RecordName, attempt: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub enum SecurityEvent {
    /// A notification whose PoA does not verify against its name.
    NotifPoAInvalid { name: RecordName },
    /// A notification whose signer resolves but may not sign (revoked, expired).
    NotifSignerRejected { name: RecordName, error: ResolveError },
    MalformedNotif,
    MalformedSync,
    /// Fetched Data that does not match its name or the announced PoA.
    DataMismatch { name: RecordName },
}

#[derive(Clone, Debug, PartialEq)]
pub enum PeerEvent {
    Published { name: RecordName },
    PublishFailed(LedgerError),
    Stored { name: RecordName },
    Confirmed { name: RecordName },
    Rejected { name: RecordName, reason: RejectReason },
    /// Notification skipped because its signer is not resolvable yet.
    NotifUnverifiable { name: RecordName },
    Security(SecurityEvent),
    FetchAbandoned { name: RecordName },
    SyncSent { reply: bool },
}

#[derive(Debug)]
struct Fetch {
    arrival: Arrival,
    /// PoA and key announced by the notification, checked against the Data.
    announced: Option<(Signature, KeyLocator)>,
    attempt: usize,
}

#[derive(Debug)]
struct SyncAssembly {
    parts: Vec<Option<Vec<RecordName>>>,
    started: SimTime,
}

pub struct PeerDaemon {
    entity: EntityId,
    keys: KeyPair,
    signer: KeyLocator,
    ledger: Ledger,
    config: PeerConfig,
    rng: ChaCha8Rng,
    /// Approval choice has its own stream, so unrelated traffic (fetch nonces,
    /// sync offsets) does not change which records a peer approves.
    select_rng: ChaCha8Rng,
    fetches: FxHashMap<RecordName, Fetch>,
    last_sync: Option<SimTime>,
    recovery_pending: bool,
    assembling: FxHashMap<String, SyncAssembly>,
}

impl std::fmt::Debug for PeerDaemon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PeerDaemon")
            .field("entity", &self.entity)
            .field("ledger", &self.ledger)
            .field("fetches", &self.fetches.len())
            .finish_non_exhaustive()
    }
}

pub fn notif_prefix() -> String {
    format!("/{NAME_ROOT}/{NOTIF_COMPONENT}")
}

pub fn sync_prefix() -> String {
    format!("/{NAME_ROOT}/{SYNC_COMPONENT}")
}

impl PeerDaemon {
    pub fn new(
        entity: EntityId,
        keys: KeyPair,
        signer: KeyLocator,
        ledger: Ledger,
        config: PeerConfig,
        seed: u64,
    ) -> Self {
        PeerDaemon {
            entity,
            keys,
            signer,
            ledger,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            select_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5e1e_c7ed_a990_0a15),
            fetches: FxHashMap::default(),
            last_sync: None,
            recovery_pending: false,
            assembling: FxHashMap::default(),
        }
    }

    pub fn entity(&self) -> &EntityId {
        &self.entity
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn signer(&self) -> &KeyLocator {
        &self.signer
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut Ledger {
        &mut self.ledger
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn outstanding_fetches(&self) -> usize {
        self.fetches.len()
    }

    /// Arms the periodic synchronization timer at a random offset within one
    /// interval, so peers do not sync in lockstep.
    pub fn start(&mut self, io: &mut dyn PeerIo) {
        let first = self.rng.gen_range(0..self.config.sync_interval.as_micros().max(1));
        io.set_timer(SimDuration::from_micros(first), PeerTimer::Sync);
    }

    /// Creates, stores and announces a record carrying `payload`.
    pub fn publish(&mut self, io: &mut dyn PeerIo, payload: RecordPayload) -> Result<RecordName, LedgerError> {
        let rec = self.ledger.create_record(&self.entity, payload, self.signer.clone(), &self.keys, &mut self.select_rng);
        match rec {
            Ok(rec) => {
                let name = rec.name.clone();
                self.announce(io, rec);
                Ok(name)
            }
            Err(e) => {
                io.emit(PeerEvent::PublishFailed(e.clone()));
                Err(e)
            }
        }
    }

    /// Admits a locally built record and multicasts its notification.
    pub fn announce(&mut self, io: &mut dyn PeerIo, rec: Record) -> Admission {
        let rec = Arc::new(rec);
        let now = io.now().as_secs_f64();
        let adm = self.ledger.admit(rec.clone(), Arrival::Local, now);
        let stored = adm.verdict == Verdict::Accepted;
        if stored {
            io.emit(PeerEvent::Published { name: rec.name.clone() });
        }
        self.after_admission(io, &rec.name, &adm);
        if stored {
            self.send_notif(io, &rec.name, &rec.poa, &rec.signer_key);
        }
        adm
    }

    /// Multicasts a notification; adversaries may call this with forged values.
    pub fn send_notif(&mut self, io: &mut dyn PeerIo, name: &RecordName, poa: &Signature, key: &KeyLocator) {
        let param = encode_notif_parameter(poa, key);
        io.send_interest(Interest::new(name.notif_name(), self.rng.next_u64()).with_parameter(param));
    }

    // ----- upcalls ---------------------------------------------------------

    pub fn on_interest(&mut self, io: &mut dyn PeerIo, interest: Interest) {
        let name = &*interest.name;
        if name.starts_with(&notif_prefix()) && name[notif_prefix().len()..].starts_with('/') {
            self.on_notif(io, &interest);
        } else if name.starts_with(&sync_prefix()) && name[sync_prefix().len()..].starts_with('/') {
            self.on_sync(io, &interest);
        } else if let Ok(rn) = RecordName::from_str(name) {
            if let Some(rec) = self.ledger.get(&rn) {
                io.send_data(DataPacket {
                    name: interest.name.clone(),
                    content: rec.content().into(),
                    signature: rec.poa.0.clone().into(),
                });
            }
        }
    }

    fn on_notif(&mut self, io: &mut dyn PeerIo, interest: &Interest) {
        let Ok(name) = RecordName::from_notif_name(&interest.name) else {
            io.emit(PeerEvent::Security(SecurityEvent::MalformedNotif));
            return;
        };
        if self.ledger.knows(&name) || self.fetches.contains_key(&name) {
            return;
        }
        let Some(Ok((poa, key))) = interest.parameter.as_deref().map(decode_notif_parameter) else {
            io.emit(PeerEvent::Security(SecurityEvent::MalformedNotif));
            return;
        };
        let now = io.now().as_secs_f64();
        let signer = match self.ledger.resolve_signer(&key, now) {
            Ok(s) => s,
            Err(ResolveError::NotFound | ResolveError::NotConfirmed) => {
                io.emit(PeerEvent::NotifUnverifiable { name });
                return;
            }
            Err(error) => {
                io.emit(PeerEvent::Security(SecurityEvent::NotifSignerRejected { name, error }));
                return;
            }
        };
        let provider = self.ledger.provider().clone();
        if &signer.subject != name.generator() || !poa_matches_name(provider.as_ref(), &name, &poa, &signer.public_key) {
            io.emit(PeerEvent::Security(SecurityEvent::NotifPoAInvalid { name }));
            return;
        }
        self.fetch(io, name, Arrival::Tailing, Some((poa, key)));
    }

    fn on_sync(&mut self, io: &mut dyn PeerIo, interest: &Interest) {
        let digest = interest.name[sync_prefix().len() + 1..].to_owned();
        let Some(Ok(chunk)) = interest.parameter.as_deref().map(SyncChunk::decode) else {
            io.emit(PeerEvent::Security(SecurityEvent::MalformedSync));
            return;
        };
        let names = if chunk.total == 1 {
            chunk.names
        } else {
            let now = io.now();
            let asm = self.assembling.entry(digest.clone()).or_insert_with(|| SyncAssembly {
                parts: vec![None; chunk.total as usize],
                started: now,
            });
            if asm.parts.len() != chunk.total as usize {
                io.emit(PeerEvent::Security(SecurityEvent::MalformedSync));
                return;
            }
            asm.parts[chunk.seq as usize] = Some(chunk.names);
            if asm.parts.iter().any(Option::is_none) {
                return;
            }
            let asm = self.assembling.remove(&digest).expect("present");
            asm.parts.into_iter().flatten().flatten().collect()
        };

        for n in &names {
            if self.ledger.wants(n) && !self.fetches.contains_key(n) {
                self.fetch(io, n.clone(), Arrival::Backfill, None);
            }
        }
        if self.sender_is_behind(io.now(), &names) {
            let holdoff_over = self.last_sync.is_none_or(|t| io.now().saturating_sub(t) >= self.config.reply_holdoff);
            if holdoff_over {
                self.run_sync(io, true);
            }
        }
    }

    /// The sender lists a record we have already seen approved, or lacks a
    /// tailing record we have held for a while.
    fn sender_is_behind(&self, now: SimTime, listed: &[RecordName]) -> bool {
        let settled = now.as_secs_f64() - self.config.settle.as_secs_f64();
        let listed_old = listed.iter().any(|n| self.ledger.superseded_at(n).is_some_and(|t| t <= settled));
        if listed_old {
            return true;
        }
        let set: FxHashSet<&RecordName> = listed.iter().collect();
        self.ledger.tailing_names().iter().any(|t| {
            !set.contains(t) && self.ledger.status(t).is_some_and(|s| s.arrived_at <= settled)
        })
    }

    pub fn on_data(&mut self, io: &mut dyn PeerIo, data: DataPacket) {
        let Ok(name) = RecordName::from_str(&data.name) else { return };
        let Some(fetch) = self.fetches.remove(&name) else { return };
        let max = self.ledger.config().max_payload;
        let rec = match Record::from_parts(&data.content, &data.signature, max) {
            Ok(r) if r.name == name => r,
            _ => {
                io.emit(PeerEvent::Security(SecurityEvent::DataMismatch { name }));
                return;
            }
        };
        let now = io.now().as_secs_f64();
        let rec = Arc::new(rec);
        let adm = match &fetch.announced {
            Some((poa, key)) => {
                if &rec.poa != poa || &rec.signer_key != key {
                    io.emit(PeerEvent::Security(SecurityEvent::DataMismatch { name }));
                    return;
                }
                self.ledger.admit_preverified(rec, fetch.arrival, now)
            }
            None => self.ledger.admit(rec, fetch.arrival, now),
        };
        self.after_admission(io, &name, &adm);
    }

    pub fn on_timer(&mut self, io: &mut dyn PeerIo, timer: PeerTimer) {
        match timer {
            PeerTimer::Sync => {
                self.run_sync(io, false);
                io.set_timer(self.config.sync_interval, PeerTimer::Sync);
            }
            PeerTimer::RecoverySync => {
                self.recovery_pending = false;
                self.run_sync(io, false);
            }
            PeerTimer::FetchTimeout { name, attempt } => {
                let Some(f) = self.fetches.get_mut(&name) else { return };
                if f.attempt != attempt {
                    return;
                }
                if attempt + 1 >= self.config.retry_schedule.len() {
                    self.fetches.remove(&name);
                    io.emit(PeerEvent::FetchAbandoned { name });
                    return;
                }
                f.attempt += 1;
                let wait = self.config.retry_schedule[f.attempt];
                io.send_interest(Interest::new(name.to_string(), self.rng.next_u64()));
                io.set_timer(wait, PeerTimer::FetchTimeout { name, attempt: attempt + 1 });
            }
        }
    }

    /// A link of this node came back up: synchronize right away.
    pub fn on_link_up(&mut self, io: &mut dyn PeerIo) {
        if !self.recovery_pending {
            self.recovery_pending = true;
            io.set_timer(SimDuration::from_micros(0), PeerTimer::RecoverySync);
        }
    }

    // ----- internals -------------------------------------------------------

    /// Multicasts the tailing list, and re-requests ancestors that parked
    /// records still wait for.
    pub fn run_sync(&mut self, io: &mut dyn PeerIo, reply: bool) {
        let now = io.now();
        self.assembling.retain(|_, a| now.saturating_sub(a.started) < SimDuration::from_secs(30));
        for m in self.ledger.parked_missing() {
            if self.ledger.wants(&m) && !self.fetches.contains_key(&m) {
                self.fetch(io, m, Arrival::Backfill, None);
            }
        }
        let names = self.ledger.tailing_names();
        let digest = tailing_digest(&names).to_hex();
        let chunks = chunk_names(names, self.config.sync_chunk_bytes);
        let total = chunks.len() as u32;
        for (seq, names) in chunks.into_iter().enumerate() {
            let param = SyncChunk { seq: seq as u32, total, names }.encode();
            let name = format!("{}/{}", sync_prefix(), digest);
            io.send_interest(Interest::new(name, self.rng.next_u64()).with_parameter(param));
        }
        self.last_sync = Some(now);
        io.emit(PeerEvent::SyncSent { reply });
    }

    fn fetch(&mut self, io: &mut dyn PeerIo, name: RecordName, arrival: Arrival, announced: Option<(Signature, KeyLocator)>) {
        io.send_interest(Interest::new(name.to_string(), self.rng.next_u64()));
        io.set_timer(self.config.retry_schedule[0], PeerTimer::FetchTimeout { name: name.clone(), attempt: 0 });
        self.fetches.insert(name, Fetch { arrival, announced, attempt: 0 });
    }

    fn after_admission(&mut self, io: &mut dyn PeerIo, name: &RecordName, adm: &Admission) {
        for n in &adm.accepted {
            io.emit(PeerEvent::Stored { name: n.clone() });
        }
        for n in &adm.confirmed {
            io.emit(PeerEvent::Confirmed { name: n.clone() });
        }
        for (n, r) in &adm.rejected {
            io.emit(PeerEvent::Rejected { name: n.clone(), reason: *r });
        }
        match &adm.verdict {
            Verdict::Rejected(r) => io.emit(PeerEvent::Rejected { name: name.clone(), reason: *r }),
            Verdict::Pending { missing } => {
                for m in missing {
                    if self.ledger.wants(m) && !self.fetches.contains_key(m) {
                        self.fetch(io, m.clone(), Arrival::Backfill, None);
                    }
                }
            }
            Verdict::Accepted => {}
        }
    }
}

/// Splits a tailing list into chunks whose encoded parameter stays within
/// `max_bytes`. Always returns at least one (possibly empty) chunk.
fn chunk_names(names: Vec<RecordName>, max_bytes: usize) -> Vec<Vec<RecordName>> {
    let budget = max_bytes.saturating_sub(SyncChunk::OVERHEAD).max(1);
    let mut out = vec![Vec::new()];
    let mut used = 0;
    for n in names {
        let cost = SyncChunk::name_cost(&n);
        if used + cost > budget && !out.last().expect("non-empty").is_empty() {
            out.push(Vec::new());
            used = 0;
        }
        used += cost;
        out.last_mut().expect("non-empty").push(n);
    }
    out
}
