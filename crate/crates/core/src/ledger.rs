//! Per-peer DAG store and record admission.
//!
//! Admission runs every arriving record through the same pipeline: PoA and
//! certificate checks, the interlock rule, the contribution rule (tailing
//! arrivals only), and the application validator. Accepted records update the
//! tailing set and the approver sets of their ancestors.
//!
//! Approver sets are maintained incrementally. When a record by entity `e` is
//! stored, `e` is pushed down the approval edges and the walk stops at any
//! ancestor that already counts `e`: whoever reached that ancestor before also
//! reached everything below it. Each (record, entity) pair is therefore
//! touched at most once over the life of the ledger.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use rand::seq::index;
use rand::RngCore;
use rustc_hash::{FxHashMap, FxHashSet};
use smallvec::SmallVec;
use thiserror::Error;

use crate::crypto::{KeyPair, SignatureProvider};
use crate::entity_set::EntitySet;
use crate::identity::{
    resolve_signer, IdentityIndex, ResolveError, ResolvedSigner, RevocationStatus, TrustStore,
};
use crate::record::{
    EntityId, KeyLocator, PayloadKind, Record, RecordError, RecordName, RecordPayload,
    UnsignedRecord, DEFAULT_MAX_PAYLOAD,
};

#[derive(Clone, Debug, PartialEq)]
pub struct LedgerConfig {
    /// Approvals carried by every non-genesis record (`n`).
    pub approvals: usize,
    pub w_confirm: u32,
    pub w_contribution: u32,
    /// Count a generator's own later records towards its record's weight.
    pub count_self_indirect: bool,
    /// Unconfirmed records older than this (seconds since arrival) are pruned.
    pub unconfirmed_ttl: Option<f64>,
    /// Confirmed records further than this many approvals from every tailing
    /// record are archived.
    pub archive_depth: Option<u32>,
    pub max_payload: usize,
    pub pending_cap: usize,
    /// A contribution violation against a record confirmed at least this many
    /// seconds earlier is laziness, not a weight race: such records are never
    /// recovered through synchronization.
    pub stale_after: f64,
    /// Honest peers enforce interlock, contribution and application rules.
    /// Simulated adversaries turn this off for their own ledgers.
    pub enforce_policies: bool,
}

impl LedgerConfig {
    pub fn new(approvals: usize, w_confirm: u32) -> Self {
        LedgerConfig {
            approvals,
            w_confirm,
            w_contribution: default_w_contribution(w_confirm),
            count_self_indirect: false,
            unconfirmed_ttl: None,
            archive_depth: None,
            max_payload: DEFAULT_MAX_PAYLOAD,
            pending_cap: 512,
            stale_after: 10.0,
            enforce_policies: true,
        }
    }

    pub fn validate(&self) -> Result<(), LedgerError> {
        if self.approvals < 2 {
            return Err(LedgerError::InvalidConfig("approvals per record must be at least 2".into()));
        }
        if self.w_confirm == 0 || self.w_contribution == 0 {
            return Err(LedgerError::InvalidConfig("weights must be positive".into()));
        }
        // W_confirm = 1 leaves no room below it; the strict rule (w = 0) applies.
        let degenerate = self.w_confirm == 1 && self.w_contribution == 1;
        if self.w_contribution >= self.w_confirm && !degenerate {
            return Err(LedgerError::InvalidConfig(format!(
                "need 0 < w_contribution ({}) < w_confirm ({})",
                self.w_contribution, self.w_confirm
            )));
        }
        if self.pending_cap == 0 {
            return Err(LedgerError::InvalidConfig("pending cap must be positive".into()));
        }
        Ok(())
    }
}

/// A quarter of `w_confirm`, but at least 2 so that recently approved
/// records stay eligible; always below `w_confirm` where possible.
pub fn default_w_contribution(w_confirm: u32) -> u32 {
    (w_confirm / 4).max(2).min(w_confirm.saturating_sub(1)).max(1)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerError {
    #[error("invalid ledger configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown record {0}")]
    UnknownRecord(RecordName),
    #[error("only {available} eligible approval candidates, {needed} needed")]
    InsufficientCandidates { available: usize, needed: usize },
    #[error("genesis record {0} rejected: {1}")]
    BadGenesis(RecordName, RejectReason),
    #[error(transparent)]
    Record(#[from] RecordError),
}

/// How a record reached the ledger.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arrival {
    /// Created by this peer.
    Local,
    /// Announced as a new record; the contribution rule applies.
    Tailing,
    /// Fetched during synchronization or as an ancestor of another record.
    Backfill,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RejectReason {
    PoAInvalid,
    UnknownKey,
    CertNotConfirmed,
    CertRevoked,
    CertExpired,
    /// Identity payload not signed by a trusted manager root.
    Unauthorized,
    SelfApproval,
    ContributionViolation,
    AppRejected,
    DuplicateName,
    /// Approves a record this ledger rejected for a non-transient reason.
    ApprovesRejected,
    Malformed,
}

impl RejectReason {
    pub const ALL: [RejectReason; 12] = [
        RejectReason::PoAInvalid,
        RejectReason::UnknownKey,
        RejectReason::CertNotConfirmed,
        RejectReason::CertRevoked,
        RejectReason::CertExpired,
        RejectReason::Unauthorized,
        RejectReason::SelfApproval,
        RejectReason::ContributionViolation,
        RejectReason::AppRejected,
        RejectReason::DuplicateName,
        RejectReason::ApprovesRejected,
        RejectReason::Malformed,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::PoAInvalid => "PoAInvalid",
            RejectReason::UnknownKey => "UnknownKey",
            RejectReason::CertNotConfirmed => "CertNotConfirmed",
            RejectReason::CertRevoked => "CertRevoked",
            RejectReason::CertExpired => "CertExpired",
            RejectReason::Unauthorized => "Unauthorized",
            RejectReason::SelfApproval => "SelfApproval",
            RejectReason::ContributionViolation => "ContributionViolation",
            RejectReason::AppRejected => "AppRejected",
            RejectReason::DuplicateName => "DuplicateName",
            RejectReason::ApprovesRejected => "ApprovesRejected",
            RejectReason::Malformed => "Malformed",
        }
    }

    /// Permanent rejections are remembered and poison descendants. Transient
    /// ones may succeed later (missing certificate, weight race, or enough
    /// vouching weight for an application-rejected record).
    fn is_permanent(&self) -> bool {
        !matches!(
            self,
            RejectReason::UnknownKey
                | RejectReason::CertNotConfirmed
                | RejectReason::ContributionViolation
                | RejectReason::AppRejected
                | RejectReason::DuplicateName
        )
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    Rejected(RejectReason),
    Pending { missing: Vec<RecordName> },
}

/// Outcome of one admission call, including records released from the
/// parking buffer as a consequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Admission {
    pub verdict: Verdict,
    /// Every record stored by this call, in storage order.
    pub accepted: Vec<RecordName>,
    /// Records whose weight crossed `w_confirm` during this call.
    pub confirmed: Vec<RecordName>,
    /// Previously parked records that were rejected when released.
    pub rejected: Vec<(RecordName, RejectReason)>,
}

impl Admission {
    fn new() -> Self {
        Admission { verdict: Verdict::Accepted, accepted: Vec::new(), confirmed: Vec::new(), rejected: Vec::new() }
    }
}

/// Application-level payload check, the fourth admission requirement.
pub trait PayloadValidator: Send + Sync + fmt::Debug {
    fn accept(&self, record: &Record) -> bool;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct AcceptAll;

impl PayloadValidator for AcceptAll {
    fn accept(&self, _: &Record) -> bool {
        true
    }
}

/// Rejects application payloads starting with [`RejectMarked::MARK`]. Used by
/// collusion scenarios to model semantically invalid records.
#[derive(Debug, Default, Clone, Copy)]
pub struct RejectMarked;

impl RejectMarked {
    pub const MARK: &'static [u8] = b"INVALID";
}

impl PayloadValidator for RejectMarked {
    fn accept(&self, record: &Record) -> bool {
        !(record.payload.kind == PayloadKind::Application && record.payload.body.starts_with(Self::MARK))
    }
}

/// Destination of archived confirmed records.
pub trait ArchiveSink: Send + fmt::Debug {
    fn archive(&mut self, record: Arc<Record>);
    fn get(&self, name: &RecordName) -> Option<Arc<Record>>;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Default)]
pub struct MemoryArchive {
    records: FxHashMap<RecordName, Arc<Record>>,
}

impl ArchiveSink for MemoryArchive {
    fn archive(&mut self, record: Arc<Record>) {
        self.records.insert(record.name.clone(), record);
    }
    fn get(&self, name: &RecordName) -> Option<Arc<Record>> {
        self.records.get(name).cloned()
    }
    fn len(&self) -> usize {
        self.records.len()
    }
}

/// Appends archived records to a file in the dump format (hex wire, one per line).
#[derive(Debug)]
pub struct FileArchive {
    out: std::io::BufWriter<std::fs::File>,
    count: usize,
}

impl FileArchive {
    pub fn create(path: &std::path::Path) -> std::io::Result<Self> {
        Ok(FileArchive { out: std::io::BufWriter::new(std::fs::File::create(path)?), count: 0 })
    }
}

impl ArchiveSink for FileArchive {
    fn archive(&mut self, record: Arc<Record>) {
        use std::io::Write;
        // Archiving is best effort; a failed write loses only the backup copy.
        let _ = writeln!(self.out, "{}", hex::encode(record.to_wire()));
        let _ = self.out.flush();
        self.count += 1;
    }
    fn get(&self, _: &RecordName) -> Option<Arc<Record>> {
        None
    }
    fn len(&self) -> usize {
        self.count
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ArchiveReport {
    pub pruned: Vec<RecordName>,
    pub archived: Vec<RecordName>,
}

impl ArchiveReport {
    pub fn is_empty(&self) -> bool {
        self.pruned.is_empty() && self.archived.is_empty()
    }
}

#[derive(Debug)]
struct Entry {
    record: Arc<Record>,
    generator: u32,
    /// Slots of stored parents. Archived parents are not listed.
    parents: SmallVec<[u32; 2]>,
    children: u32,
    approvers: EntitySet,
    arrived_at: f64,
    confirmed_at: Option<f64>,
    genesis: bool,
    /// When the first stored child arrived.
    superseded_at: Option<f64>,
    /// Failed the contribution rule on arrival and was stored later as an
    /// ancestor; this peer will not approve it.
    flagged: bool,
}

#[derive(Debug)]
struct Parked {
    record: Arc<Record>,
    missing: SmallVec<[RecordName; 2]>,
}

#[derive(Debug)]
struct Disputed {
    record: Arc<Record>,
    reason: RejectReason,
    /// Contribution violation against an already-confirmed record (laziness),
    /// as opposed to a weight race on an unconfirmed one.
    stale: bool,
}

/// Read-only summary of a stored record.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordStatus {
    pub weight: usize,
    pub confirmed_at: Option<f64>,
    pub arrived_at: f64,
    pub tailing: bool,
    pub genesis: bool,
}

/// One peer's view of the ledger.
pub struct Ledger {
    config: LedgerConfig,
    provider: Arc<dyn SignatureProvider>,
    trust: TrustStore,
    validator: Arc<dyn PayloadValidator>,
    identity: IdentityIndex,

    entity_ids: Vec<EntityId>,
    entity_index: FxHashMap<EntityId, u32>,

    slots: Vec<Option<Entry>>,
    index: FxHashMap<RecordName, u32>,
    tailing: BTreeSet<u32>,
    unconfirmed: BTreeSet<u32>,
    confirmed_count: usize,

    parked: FxHashMap<RecordName, Parked>,
    park_order: VecDeque<RecordName>,
    waiting_on: FxHashMap<RecordName, SmallVec<[RecordName; 2]>>,
    disputed: FxHashMap<RecordName, Disputed>,
    dispute_order: VecDeque<RecordName>,
    rejected: FxHashMap<RecordName, RejectReason>,
    reject_order: VecDeque<RecordName>,

    archived: FxHashSet<RecordName>,
    sink: Box<dyn ArchiveSink>,
    honored_certs: BTreeSet<RecordName>,
}

impl fmt::Debug for Ledger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ledger")
            .field("records", &self.index.len())
            .field("tailing", &self.tailing.len())
            .field("unconfirmed", &self.unconfirmed.len())
            .finish_non_exhaustive()
    }
}

const REJECT_MEMORY: usize = 1 << 16;

impl Ledger {
    pub fn new(
        config: LedgerConfig,
        provider: Arc<dyn SignatureProvider>,
        trust: TrustStore,
    ) -> Result<Self, LedgerError> {
        config.validate()?;
        Ok(Ledger {
            config,
            provider,
            trust,
            validator: Arc::new(AcceptAll),
            identity: IdentityIndex::default(),
            entity_ids: Vec::new(),
            entity_index: FxHashMap::default(),
            slots: Vec::new(),
            index: FxHashMap::default(),
            tailing: BTreeSet::new(),
            unconfirmed: BTreeSet::new(),
            confirmed_count: 0,
            parked: FxHashMap::default(),
            park_order: VecDeque::new(),
            waiting_on: FxHashMap::default(),
            disputed: FxHashMap::default(),
            dispute_order: VecDeque::new(),
            rejected: FxHashMap::default(),
            reject_order: VecDeque::new(),
            archived: FxHashSet::default(),
            sink: Box::new(MemoryArchive::default()),
            honored_certs: BTreeSet::new(),
        })
    }

    pub fn with_validator(mut self, validator: Arc<dyn PayloadValidator>) -> Self {
        self.validator = validator;
        self
    }

    pub fn with_archive(mut self, sink: Box<dyn ArchiveSink>) -> Self {
        self.sink = sink;
        self
    }

    /// Stores genesis records as confirmed, each approved by every known entity.
    pub fn bootstrap(&mut self, genesis: &[Arc<Record>]) -> Result<(), LedgerError> {
        for g in genesis {
            if self.index.contains_key(&g.name) {
                continue;
            }
            self.check_genesis(g).map_err(|r| LedgerError::BadGenesis(g.name.clone(), r))?;
            self.store_genesis(g.clone(), 0.0);
        }
        Ok(())
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    pub fn provider(&self) -> &Arc<dyn SignatureProvider> {
        &self.provider
    }

    pub fn trust(&self) -> &TrustStore {
        &self.trust
    }

    pub(crate) fn identity(&self) -> &IdentityIndex {
        &self.identity
    }

    // ----- queries ---------------------------------------------------------

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, name: &RecordName) -> bool {
        self.index.contains_key(name)
    }

    /// Stored, parked, archived, disputed, or remembered as rejected.
    pub fn knows(&self, name: &RecordName) -> bool {
        self.index.contains_key(name)
            || self.parked.contains_key(name)
            || self.archived.contains(name)
            || self.disputed.contains_key(name)
            || self.rejected.contains_key(name)
    }

    /// Stored after losing a contribution race; never picked for approval.
    pub fn is_flagged(&self, name: &RecordName) -> bool {
        self.index.get(name).is_some_and(|&s| self.entry(s).flagged)
    }

    /// Records held back after a contribution or application rejection.
    pub fn disputed_len(&self) -> usize {
        self.disputed.len()
    }

    /// Whether a Sync listing of `name` should trigger a fetch: unknown, or a
    /// record that only lost a contribution race here.
    pub fn wants(&self, name: &RecordName) -> bool {
        match self.disputed.get(name) {
            Some(d) => d.reason == RejectReason::ContributionViolation && !d.stale,
            None => !self.knows(name),
        }
    }

    pub fn is_parked(&self, name: &RecordName) -> bool {
        self.parked.contains_key(name)
    }

    pub fn parked_len(&self) -> usize {
        self.parked.len()
    }

    pub fn rejection(&self, name: &RecordName) -> Option<RejectReason> {
        self.rejected
            .get(name)
            .copied()
            .or_else(|| self.disputed.get(name).map(|d| d.reason))
    }

    /// Names that parked records are waiting for.
    pub fn parked_missing(&self) -> Vec<RecordName> {
        let mut v: Vec<RecordName> = self.waiting_on.keys().cloned().collect();
        v.sort();
        v
    }

    /// When a stored record stopped being tailing, if it has.
    pub fn superseded_at(&self, name: &RecordName) -> Option<f64> {
        self.index.get(name).and_then(|&s| self.entry(s).superseded_at)
    }

    pub fn is_archived(&self, name: &RecordName) -> bool {
        self.archived.contains(name)
    }

    pub fn archive(&self) -> &dyn ArchiveSink {
        self.sink.as_ref()
    }

    pub fn get(&self, name: &RecordName) -> Option<Arc<Record>> {
        match self.index.get(name) {
            Some(&slot) => Some(self.entry(slot).record.clone()),
            None => self.sink.get(name),
        }
    }

    /// Number of distinct entities approving `name` directly or indirectly.
    pub fn weight(&self, name: &RecordName) -> Result<usize, LedgerError> {
        let slot = self.slot_of(name)?;
        Ok(self.entry(slot).approvers.len())
    }

    /// The approving entities behind [`Ledger::weight`].
    pub fn approvers(&self, name: &RecordName) -> Result<BTreeSet<EntityId>, LedgerError> {
        let slot = self.slot_of(name)?;
        Ok(self
            .entry(slot)
            .approvers
            .iter()
            .map(|i| self.entity_ids[i as usize].clone())
            .collect())
    }

    pub fn is_confirmed(&self, name: &RecordName) -> bool {
        self.index
            .get(name)
            .is_some_and(|&s| self.entry(s).confirmed_at.is_some())
            || self.archived.contains(name)
    }

    pub fn status(&self, name: &RecordName) -> Option<RecordStatus> {
        let &slot = self.index.get(name)?;
        let e = self.entry(slot);
        Some(RecordStatus {
            weight: e.approvers.len(),
            confirmed_at: e.confirmed_at,
            arrived_at: e.arrived_at,
            tailing: self.tailing.contains(&slot),
            genesis: e.genesis,
        })
    }

    pub fn tailing_len(&self) -> usize {
        self.tailing.len()
    }

    /// Tailing record names, sorted by rendered name.
    pub fn tailing_names(&self) -> Vec<RecordName> {
        let mut v: Vec<RecordName> =
            self.tailing.iter().map(|&s| self.entry(s).record.name.clone()).collect();
        v.sort_by_cached_key(|n| n.to_string());
        v
    }

    pub fn is_tailing(&self, name: &RecordName) -> bool {
        self.index.get(name).is_some_and(|s| self.tailing.contains(s))
    }

    pub fn unconfirmed_len(&self) -> usize {
        self.unconfirmed.len()
    }

    pub fn confirmed_len(&self) -> usize {
        self.confirmed_count
    }

    /// Stored records in storage order (parents always precede children).
    pub fn records(&self) -> impl Iterator<Item = &Arc<Record>> + '_ {
        self.slots.iter().flatten().map(|e| &e.record)
    }

    pub fn record_names(&self) -> BTreeSet<RecordName> {
        self.index.keys().cloned().collect()
    }

    /// Certificates this ledger has used to accept a PoA.
    pub fn honored_certs(&self) -> &BTreeSet<RecordName> {
        &self.honored_certs
    }

    /// Longest approval path made only of unconfirmed records.
    pub fn max_unconfirmed_depth(&self) -> usize {
        let mut depth: FxHashMap<u32, usize> = FxHashMap::default();
        let mut best = 0;
        for &slot in &self.unconfirmed {
            let e = self.entry(slot);
            let d = 1 + e.parents.iter().filter_map(|p| depth.get(p)).copied().max().unwrap_or(0);
            depth.insert(slot, d);
            best = best.max(d);
        }
        best
    }

    pub fn revocation_status(&self, cert: &RecordName) -> RevocationStatus {
        self.identity.status(cert)
    }

    pub fn latest_revocation(&self) -> Option<&RecordName> {
        self.identity.latest_revocation()
    }

    pub fn resolve_signer(
        &mut self,
        locator: &KeyLocator,
        now: f64,
    ) -> Result<ResolvedSigner, ResolveError> {
        resolve_signer(&mut self.trust, &self.identity, locator, now)
    }

    // ----- record creation -------------------------------------------------

    /// Builds and signs a new record approving `approvals` foreign records.
    ///
    /// Tailing records not generated by `generator` are preferred; if fewer than
    /// `approvals` exist, recent unconfirmed records below the contribution
    /// threshold fill the remaining slots. Records this peer flagged as policy
    /// violations are never picked. The record is not stored; feed it back
    /// through [`Ledger::admit`].
    pub fn create_record(
        &self,
        generator: &EntityId,
        payload: RecordPayload,
        signer_key: KeyLocator,
        keys: &KeyPair,
        rng: &mut dyn RngCore,
    ) -> Result<Record, LedgerError> {
        let approved = self.select_approvals(generator, rng)?;
        let rec = UnsignedRecord { generator: generator.clone(), approved, payload, signer_key }
            .sign(self.provider.as_ref(), keys, self.config.max_payload)?;
        Ok(rec)
    }

    /// The candidate choice behind [`Ledger::create_record`].
    pub fn select_approvals(
        &self,
        generator: &EntityId,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<RecordName>, LedgerError> {
        let n = self.config.approvals;
        let own = self.entity_index.get(generator).copied();
        let eligible = |slot: &u32| {
            let e = self.entry(*slot);
            Some(e.generator) != own && !e.flagged
        };
        let tips: Vec<u32> = self.tailing.iter().copied().filter(eligible).collect();
        let mut chosen: Vec<u32> = if tips.len() >= n {
            index::sample(rng, tips.len(), n).into_iter().map(|i| tips[i]).collect()
        } else {
            tips
        };
        if chosen.len() < n {
            // Lowest weight first, most recent among equals: those are the
            // least likely to cross the threshold while the record travels.
            let mut fallback: Vec<(usize, u32)> = self
                .unconfirmed
                .iter()
                .rev()
                .copied()
                .filter(|s| !self.tailing.contains(s) && eligible(s))
                .map(|s| (self.entry(s).approvers.len(), s))
                .filter(|&(w, _)| w < self.config.w_contribution as usize)
                .collect();
            let need = n - chosen.len();
            if fallback.len() < need {
                return Err(LedgerError::InsufficientCandidates {
                    available: chosen.len() + fallback.len(),
                    needed: n,
                });
            }
            fallback.sort_by_key(|&(w, _)| w);
            chosen.extend(fallback[..need].iter().map(|&(_, s)| s));
        }
        Ok(chosen.into_iter().map(|s| self.entry(s).record.name.clone()).collect())
    }

    // ----- admission -------------------------------------------------------

    /// Runs the full admission pipeline, PoA included.
    pub fn admit(&mut self, rec: Arc<Record>, arrival: Arrival, now: f64) -> Admission {
        self.admit_with(rec, arrival, now, true)
    }

    /// Admission for a record whose PoA the caller already checked (the
    /// notification path verifies it from the announcement).
    pub fn admit_preverified(&mut self, rec: Arc<Record>, arrival: Arrival, now: f64) -> Admission {
        self.admit_with(rec, arrival, now, false)
    }

    fn admit_with(&mut self, rec: Arc<Record>, arrival: Arrival, now: f64, verify: bool) -> Admission {
        let mut out = Admission::new();
        let mut released = VecDeque::new();
        out.verdict = self.admit_one(rec, arrival, now, verify, false, &mut out, &mut released);
        self.drain_released(now, &mut out, &mut released);
        out
    }

    fn drain_released(&mut self, now: f64, out: &mut Admission, released: &mut VecDeque<RecordName>) {
        while let Some(parent) = released.pop_front() {
            let Some(children) = self.waiting_on.remove(&parent) else {
                continue;
            };
            for child in children {
                let ready = match self.parked.get_mut(&child) {
                    Some(p) => {
                        p.missing.retain(|m| m != &parent);
                        p.missing.is_empty()
                    }
                    None => false,
                };
                if !ready {
                    continue;
                }
                let p = self.parked.remove(&child).expect("checked above");
                // PoA was checked before parking.
                if let Verdict::Rejected(r) =
                    self.admit_one(p.record, Arrival::Backfill, now, false, false, out, released)
                {
                    out.rejected.push((child, r));
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn admit_one(
        &mut self,
        rec: Arc<Record>,
        arrival: Arrival,
        now: f64,
        verify: bool,
        vouched: bool,
        out: &mut Admission,
        released: &mut VecDeque<RecordName>,
    ) -> Verdict {
        let name = rec.name.clone();
        if self.index.contains_key(&name) || self.archived.contains(&name) {
            return Verdict::Rejected(RejectReason::DuplicateName);
        }
        if let Some(&r) = self.rejected.get(&name) {
            return Verdict::Rejected(r);
        }
        if let Some(p) = self.parked.get(&name) {
            return Verdict::Pending { missing: p.missing.to_vec() };
        }

        if rec.payload.kind == PayloadKind::Genesis {
            return match self.check_genesis(&rec) {
                Ok(()) => {
                    self.store_genesis(rec, now);
                    out.accepted.push(name.clone());
                    released.push_back(name);
                    Verdict::Accepted
                }
                Err(r) => self.reject(&rec, r),
            };
        }
        if rec.approved.len() != self.config.approvals || !rec.name_binding_holds() {
            return self.reject(&rec, RejectReason::Malformed);
        }

        if verify {
            if let Err(r) = self.check_poa(&rec, now) {
                return self.reject(&rec, r);
            }
        }
        if let Err(r) = self.check_identity_payload(&rec) {
            return self.reject(&rec, r);
        }

        let enforce = self.config.enforce_policies;
        if enforce && rec.approved.iter().any(|a| a.generator() == rec.generator()) {
            return self.reject(&rec, RejectReason::SelfApproval);
        }

        let mut present: SmallVec<[RecordName; 2]> = SmallVec::new();
        let mut missing: SmallVec<[RecordName; 2]> = SmallVec::new();
        for a in &rec.approved {
            if self.index.contains_key(a) || self.archived.contains(a) {
                present.push(a.clone());
                continue;
            }
            if enforce && self.rejected.contains_key(a) {
                return self.reject(&rec, RejectReason::ApprovesRejected);
            }
            let retry = match self.disputed.get(a) {
                Some(d) if d.reason == RejectReason::ContributionViolation => Some(d.record.clone()),
                _ => None,
            };
            if let Some(old) = retry {
                // As an ancestor it is judged without the contribution rule.
                let v = self.admit_one(old, Arrival::Backfill, now, false, false, out, released);
                if v == Verdict::Accepted {
                    present.push(a.clone());
                    continue;
                }
            }
            missing.push(a.clone());
        }

        if enforce && !vouched && matches!(arrival, Arrival::Tailing | Arrival::Local) {
            let limit = self.config.w_contribution as usize;
            let violates = present.iter().any(|a| match self.index.get(a) {
                Some(&s) => {
                    let e = self.entry(s);
                    !e.genesis && e.approvers.len() >= limit
                }
                None => true, // archived: confirmed long ago
            });
            if violates {
                let stale = present.iter().any(|a| match self.index.get(a) {
                    Some(&s) => {
                        let e = self.entry(s);
                        !e.genesis && e.confirmed_at.is_some_and(|c| now - c >= self.config.stale_after)
                    }
                    None => true,
                });
                let v = self.reject(&rec, RejectReason::ContributionViolation);
                if let Some(d) = self.disputed.get_mut(&name) {
                    d.stale = stale;
                }
                return v;
            }
        }

        if !missing.is_empty() {
            self.park(rec, missing.clone());
            for m in &missing {
                if matches!(self.disputed.get(m), Some(d) if d.reason == RejectReason::AppRejected) {
                    self.try_vouch(m, now, out, released);
                }
            }
            // Vouching may have released the record already.
            if self.index.contains_key(&name) {
                return Verdict::Accepted;
            }
            return match self.parked.get(&name) {
                Some(p) => Verdict::Pending { missing: p.missing.to_vec() },
                None => Verdict::Pending { missing: missing.to_vec() },
            };
        }

        if enforce && !vouched && !self.validator.accept(&rec) {
            if self.vouchers(&name, rec.generator()) >= self.config.w_confirm as usize {
                // Enough distinct entities already vouch for it: accepted on
                // their collective approval.
            } else {
                return self.reject(&rec, RejectReason::AppRejected);
            }
        }

        // A disputed record learned again outside the notification path is
        // judged like any back-filled record; a stale one is kept but never
        // approved.
        let flag = self.disputed.remove(&name).is_some_and(|d| d.stale);
        self.store(rec, now, out);
        if flag {
            let slot = self.index[&name];
            self.entry_mut(slot).flagged = true;
        }
        out.accepted.push(name.clone());
        released.push_back(name);
        Verdict::Accepted
    }

    fn reject(&mut self, rec: &Arc<Record>, reason: RejectReason) -> Verdict {
        let name = rec.name.clone();
        if reason.is_permanent() {
            self.remember(name.clone(), reason);
            self.drop_parked_descendants(&name);
        } else if matches!(reason, RejectReason::ContributionViolation | RejectReason::AppRejected) {
            if !self.disputed.contains_key(&name) {
                self.dispute_order.push_back(name.clone());
            }
            self.disputed.insert(name, Disputed { record: rec.clone(), reason, stale: false });
            while self.disputed.len() > self.config.pending_cap {
                match self.dispute_order.pop_front() {
                    Some(old) => {
                        self.disputed.remove(&old);
                    }
                    None => break,
                }
            }
        }
        Verdict::Rejected(reason)
    }

    fn remember(&mut self, name: RecordName, reason: RejectReason) {
        if self.rejected.insert(name.clone(), reason).is_none() {
            self.reject_order.push_back(name);
        }
        while self.rejected.len() > REJECT_MEMORY {
            match self.reject_order.pop_front() {
                Some(old) => {
                    self.rejected.remove(&old);
                }
                None => break,
            }
        }
    }

    /// Parked records that approve a permanently rejected record are rejected too.
    fn drop_parked_descendants(&mut self, root: &RecordName) {
        if !self.config.enforce_policies {
            return;
        }
        let mut stack = vec![root.clone()];
        while let Some(n) = stack.pop() {
            if let Some(children) = self.waiting_on.remove(&n) {
                for c in children {
                    if self.parked.remove(&c).is_some() {
                        if self.rejected.insert(c.clone(), RejectReason::ApprovesRejected).is_none() {
                            self.reject_order.push_back(c.clone());
                        }
                        stack.push(c);
                    }
                }
            }
        }
    }

    fn park(&mut self, rec: Arc<Record>, missing: SmallVec<[RecordName; 2]>) {
        let name = rec.name.clone();
        for m in &missing {
            let w = self.waiting_on.entry(m.clone()).or_default();
            if !w.contains(&name) {
                w.push(name.clone());
            }
        }
        self.parked.insert(name.clone(), Parked { record: rec, missing });
        self.park_order.push_back(name);
        while self.parked.len() > self.config.pending_cap {
            let Some(old) = self.park_order.pop_front() else { break };
            if let Some(p) = self.parked.remove(&old) {
                for m in &p.missing {
                    if let Some(w) = self.waiting_on.get_mut(m) {
                        w.retain(|c| c != &old);
                        if w.is_empty() {
                            self.waiting_on.remove(m);
                        }
                    }
                }
            }
        }
    }

    /// Distinct generators of parked records that approve `name` directly or
    /// through other parked records.
    fn vouchers(&self, name: &RecordName, generator: &EntityId) -> usize {
        let mut seen: FxHashSet<&RecordName> = FxHashSet::default();
        let mut gens: FxHashSet<&EntityId> = FxHashSet::default();
        let mut stack = vec![name];
        while let Some(n) = stack.pop() {
            let Some(children) = self.waiting_on.get(n) else { continue };
            for c in children {
                if !self.parked.contains_key(c) || !seen.insert(c) {
                    continue;
                }
                if self.config.count_self_indirect || c.generator() != generator {
                    gens.insert(c.generator());
                }
                stack.push(c);
            }
        }
        gens.len()
    }

    fn try_vouch(
        &mut self,
        name: &RecordName,
        now: f64,
        out: &mut Admission,
        released: &mut VecDeque<RecordName>,
    ) {
        let Some(d) = self.disputed.get(name) else { return };
        if self.vouchers(name, d.record.generator()) < self.config.w_confirm as usize {
            return;
        }
        let d = self.disputed.remove(name).expect("checked above");
        let _ = self.admit_one(d.record, Arrival::Backfill, now, false, true, out, released);
        // Children waiting on it are released by the caller's drain loop; do it
        // here too so a nested call sees them.
        self.drain_released(now, out, released);
    }

    fn check_poa(&mut self, rec: &Record, now: f64) -> Result<(), RejectReason> {
        let signer = resolve_signer(&mut self.trust, &self.identity, &rec.signer_key, now).map_err(
            |e| match e {
                ResolveError::NotFound => RejectReason::UnknownKey,
                ResolveError::NotConfirmed => RejectReason::CertNotConfirmed,
                ResolveError::Revoked(_) => RejectReason::CertRevoked,
                ResolveError::Expired => RejectReason::CertExpired,
                ResolveError::UntrustedIssuer => RejectReason::Unauthorized,
            },
        )?;
        if &signer.subject != rec.generator() || !rec.verify_poa(self.provider.as_ref(), &signer.public_key) {
            return Err(RejectReason::PoAInvalid);
        }
        if let KeyLocator::Cert(c) = &rec.signer_key {
            if !self.honored_certs.contains(c) {
                self.honored_certs.insert(c.clone());
            }
        }
        Ok(())
    }

    /// Identity payloads must come from a manager root, and an issued
    /// certificate must name that manager as issuer.
    fn check_identity_payload(&self, rec: &Record) -> Result<(), RejectReason> {
        let root_signed = |rec: &Record| match &rec.signer_key {
            KeyLocator::Root(m) => m == rec.generator() && self.trust.is_manager(m),
            KeyLocator::Cert(_) => false,
        };
        match rec.payload.kind {
            PayloadKind::CertIssuance | PayloadKind::Genesis => {
                let cert = rec.payload.certificate();
                if !root_signed(rec) || cert.is_some_and(|c| &c.issuer != rec.generator()) {
                    return Err(RejectReason::Unauthorized);
                }
            }
            PayloadKind::CertRevocation => {
                if !root_signed(rec) {
                    return Err(RejectReason::Unauthorized);
                }
            }
            PayloadKind::Application => {}
        }
        Ok(())
    }

    fn check_genesis(&mut self, rec: &Record) -> Result<(), RejectReason> {
        if !rec.approved.is_empty() || !rec.name_binding_holds() {
            return Err(RejectReason::Malformed);
        }
        self.check_identity_payload(rec)?;
        self.check_poa(rec, 0.0)
    }

    fn intern(&mut self, id: &EntityId) -> u32 {
        if let Some(&i) = self.entity_index.get(id) {
            return i;
        }
        let i = self.entity_ids.len() as u32;
        self.entity_ids.push(id.clone());
        self.entity_index.insert(id.clone(), i);
        // Genesis records stay approved by every entity.
        for slot in 0..self.slots.len() {
            if let Some(e) = self.slots[slot].as_mut() {
                if e.genesis {
                    e.approvers.insert(i);
                }
            }
        }
        i
    }

    fn store_genesis(&mut self, rec: Arc<Record>, now: f64) {
        if let Some(cert) = rec.payload.certificate() {
            self.intern(&cert.subject);
        }
        let generator = self.intern(rec.generator());
        let mut approvers = EntitySet::default();
        for i in 0..self.entity_ids.len() as u32 {
            approvers.insert(i);
        }
        let slot = self.slots.len() as u32;
        self.identity.on_stored(&rec, true);
        self.index.insert(rec.name.clone(), slot);
        self.slots.push(Some(Entry {
            record: rec,
            generator,
            parents: SmallVec::new(),
            children: 0,
            approvers,
            arrived_at: now,
            confirmed_at: Some(now),
            genesis: true,
            superseded_at: None,
            flagged: false,
        }));
        self.tailing.insert(slot);
        self.confirmed_count += 1;
    }

    fn store(&mut self, rec: Arc<Record>, now: f64, out: &mut Admission) {
        if let Some(cert) = rec.payload.certificate() {
            self.intern(&cert.subject);
        }
        let generator = self.intern(rec.generator());
        let slot = self.slots.len() as u32;
        let parents: SmallVec<[u32; 2]> =
            rec.approved.iter().filter_map(|a| self.index.get(a).copied()).collect();
        for &p in &parents {
            let pe = self.entry_mut(p);
            pe.children += 1;
            pe.superseded_at.get_or_insert(now);
            self.tailing.remove(&p);
        }
        self.identity.on_stored(&rec, false);
        self.index.insert(rec.name.clone(), slot);
        self.slots.push(Some(Entry {
            record: rec,
            generator,
            parents: parents.clone(),
            children: 0,
            approvers: EntitySet::default(),
            arrived_at: now,
            confirmed_at: None,
            genesis: false,
            superseded_at: None,
            flagged: false,
        }));
        self.tailing.insert(slot);
        self.unconfirmed.insert(slot);
        if self.config.w_confirm == 0 {
            self.confirm(slot, now, out);
        }
        self.propagate(slot, generator, now, out);
    }

    /// Pushes `generator` into the approver sets of the ancestors of `from`.
    fn propagate(&mut self, from: u32, generator: u32, now: f64, out: &mut Admission) {
        let count_self = self.config.count_self_indirect;
        let threshold = self.config.w_confirm as usize;
        let mut stack: Vec<u32> = self.entry(from).parents.to_vec();
        while let Some(slot) = stack.pop() {
            let e = self.entry_mut(slot);
            if e.approvers.contains(generator) {
                continue;
            }
            if e.generator == generator && !count_self {
                // Its own admission already pushed `generator` further down.
                continue;
            }
            e.approvers.insert(generator);
            let crossed = e.confirmed_at.is_none() && e.approvers.len() >= threshold;
            stack.extend(e.parents.iter().copied());
            if crossed {
                self.confirm(slot, now, out);
            }
        }
    }

    fn confirm(&mut self, slot: u32, now: f64, out: &mut Admission) {
        let e = self.entry_mut(slot);
        e.confirmed_at = Some(now);
        let name = e.record.name.clone();
        self.unconfirmed.remove(&slot);
        self.confirmed_count += 1;
        if self.identity.on_confirmed(&name) {
            self.trust.invalidate_cache();
        }
        out.confirmed.push(name);
    }

    // ----- pruning and archiving -------------------------------------------

    /// Local storage reduction: drops stale unconfirmed records (with their
    /// unconfirmed descendants) and archives confirmed records far from every
    /// tailing record.
    pub fn prune_and_archive(&mut self, now: f64) -> ArchiveReport {
        let mut report = ArchiveReport::default();

        if let Some(ttl) = self.config.unconfirmed_ttl {
            let mut doomed: FxHashSet<u32> = FxHashSet::default();
            for &slot in &self.unconfirmed {
                let e = self.entry(slot);
                if now - e.arrived_at > ttl || e.parents.iter().any(|p| doomed.contains(p)) {
                    doomed.insert(slot);
                }
            }
            if !doomed.is_empty() {
                let mut order: Vec<u32> = doomed.iter().copied().collect();
                order.sort_unstable();
                for slot in order {
                    let e = self.remove_slot(slot);
                    self.identity.on_removed(&e.record.name);
                    report.pruned.push(e.record.name.clone());
                }
                self.recompute_unconfirmed_weights(now);
            }
        }

        if let Some(depth) = self.config.archive_depth {
            let mut near: FxHashSet<u32> = FxHashSet::default();
            let mut frontier: Vec<u32> = self.tailing.iter().copied().collect();
            for _ in 0..=depth {
                let mut next = Vec::new();
                for s in frontier {
                    if near.insert(s) {
                        next.extend(self.entry(s).parents.iter().copied());
                    }
                }
                frontier = next;
            }
            let far: Vec<u32> = (0..self.slots.len() as u32)
                .filter(|s| self.slots[*s as usize].is_some() && !near.contains(s))
                .filter(|s| self.entry(*s).confirmed_at.is_some())
                .collect();
            for slot in far {
                let e = self.remove_slot(slot);
                let name = e.record.name.clone();
                self.archived.insert(name.clone());
                self.sink.archive(e.record);
                report.archived.push(name);
            }
        }
        report
    }

    fn remove_slot(&mut self, slot: u32) -> Entry {
        let e = self.slots[slot as usize].take().expect("live slot");
        self.index.remove(&e.record.name);
        self.tailing.remove(&slot);
        if e.confirmed_at.is_some() {
            self.confirmed_count -= 1;
        } else {
            self.unconfirmed.remove(&slot);
        }
        for &p in &e.parents {
            if let Some(pe) = self.slots[p as usize].as_mut() {
                pe.children -= 1;
                if pe.children == 0 {
                    pe.superseded_at = None;
                    self.tailing.insert(p);
                }
            }
        }
        // Children lose the edge; archived parents are treated as present.
        for child in self.slots.iter_mut().skip(slot as usize + 1).flatten() {
            child.parents.retain(|p| *p != slot);
        }
        e
    }

    /// Rebuilds approver sets of unconfirmed records from scratch. Children
    /// always sit in higher slots, so one descending pass suffices.
    fn recompute_unconfirmed_weights(&mut self, now: f64) {
        for &slot in &self.unconfirmed {
            if let Some(e) = self.slots[slot as usize].as_mut() {
                e.approvers.clear();
            }
        }
        let count_self = self.config.count_self_indirect;
        let threshold = self.config.w_confirm as usize;
        let mut sink = Admission::new();
        for slot in (0..self.slots.len() as u32).rev() {
            let Some(e) = self.slots[slot as usize].as_ref() else { continue };
            let mut carried: Vec<u32> = e.approvers.iter().collect();
            carried.push(e.generator);
            let parents = e.parents.clone();
            for p in parents {
                if !self.unconfirmed.contains(&p) {
                    continue;
                }
                let pe = self.entry_mut(p);
                for &g in &carried {
                    if count_self || g != pe.generator {
                        pe.approvers.insert(g);
                    }
                }
            }
        }
        let ready: Vec<u32> = self
            .unconfirmed
            .iter()
            .copied()
            .filter(|&s| self.entry(s).approvers.len() >= threshold)
            .collect();
        for s in ready {
            self.confirm(s, now, &mut sink);
        }
    }

    // ----- helpers ---------------------------------------------------------

    fn slot_of(&self, name: &RecordName) -> Result<u32, LedgerError> {
        self.index.get(name).copied().ok_or_else(|| LedgerError::UnknownRecord(name.clone()))
    }

    fn entry(&self, slot: u32) -> &Entry {
        self.slots[slot as usize].as_ref().expect("index points at a live slot")
    }

    fn entry_mut(&mut self, slot: u32) -> &mut Entry {
        self.slots[slot as usize].as_mut().expect("index points at a live slot")
    }
}
