//! The simulation event loop: peers, network, workload and adversaries.

use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;

use crate::crypto::{derive_seed, KeyPair, Signature};
use crate::export::{write_dot, write_dump, DumpHeader, Scheme, ValidatorKind};
use crate::identity::IdentityManager;
use crate::ledger::{Admission, Ledger, LedgerError};
use crate::net::{DataPacket, Interest, LinkSpec, NetConfig, NetEvent, Network, NodeId, Strategy, Upcall};
use crate::protocols::{notif_prefix, sync_prefix, PeerConfig, PeerDaemon, PeerEvent, PeerIo, PeerTimer};
use crate::record::{Digest, EntityId, KeyLocator, Record, RecordName, RecordPayload, UnsignedRecord, NAME_ROOT};
use crate::sched::Scheduler;
use crate::time::{SimDuration, SimTime};

use super::metrics::{LinkRow, MetricsLog, Sample};
use super::scenario::{colluder_ids, Adversary, Scenario, ScenarioError, SignatureScheme, Validator};

#[derive(Clone, Debug)]
pub enum SimEvent {
    Net(NetEvent),
    Timer { node: NodeId, timer: PeerTimer },
    Publish { node: NodeId },
    Spam { node: NodeId, rate: f64 },
    Forge { node: NodeId, rate: f64 },
    Collude { generator: NodeId, k: usize, attempt: u32 },
    Sample,
    Reduce,
}

impl From<NetEvent> for SimEvent {
    fn from(e: NetEvent) -> Self {
        SimEvent::Net(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Honest,
    Spammer,
    Lazy,
    Colluder,
    Forger,
}

struct Io<'a> {
    node: NodeId,
    honest: bool,
    net: &'a mut Network,
    sched: &'a mut Scheduler<SimEvent>,
    upcalls: &'a mut Vec<Upcall>,
    metrics: &'a mut MetricsLog,
}

impl PeerIo for Io<'_> {
    fn now(&self) -> SimTime {
        self.sched.now()
    }

    fn send_interest(&mut self, interest: Interest) {
        if self.honest && self.metrics.is_forged(&interest.name) {
            self.metrics.forged_fetches += 1;
        }
        self.net.express_interest(self.node, interest, self.sched, self.upcalls);
    }

    fn send_data(&mut self, data: DataPacket) {
        self.net.put_data(self.node, data, self.sched, self.upcalls);
    }

    fn set_timer(&mut self, after: SimDuration, timer: PeerTimer) {
        self.sched.schedule_in(after, SimEvent::Timer { node: self.node, timer });
    }

    fn emit(&mut self, event: PeerEvent) {
        let now = self.sched.now().as_secs_f64();
        self.metrics.on_peer_event(self.node, self.honest, now, event);
    }
}

/// A 64-bit stream seed derived from the run seed.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let d = derive_seed(seed, label);
    u64::from_be_bytes(d[..8].try_into().expect("8 bytes"))
}

fn exp_sample(rng: &mut impl Rng, rate: f64) -> SimDuration {
    let u: f64 = rng.gen();
    SimDuration::from_secs_f64(-(1.0 - u).ln() / rate)
}

fn invalid(e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Invalid(e.to_string())
}

pub struct Simulation {
    scenario: Scenario,
    sched: Scheduler<SimEvent>,
    net: Network,
    peers: Vec<PeerDaemon>,
    roles: Vec<Role>,
    node_of: FxHashMap<EntityId, NodeId>,
    metrics: MetricsLog,
    upcalls: Vec<Upcall>,
    workload: ChaCha8Rng,
    adversary_rng: ChaCha8Rng,
    genesis: Vec<Arc<Record>>,
    header: DumpHeader,
    published: Vec<u64>,
    colluded: Vec<bool>,
    invalid_record: Option<RecordName>,
    finished: bool,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("scenario", &self.scenario.name)
            .field("now", &self.sched.now())
            .finish_non_exhaustive()
    }
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Simulation, ScenarioError> {
        scenario.validate()?;
        let s = scenario.clone();
        let n = s.entities;
        let seed = s.seed;

        let scheme = match s.signature {
            SignatureScheme::KeyedMac => Scheme::KeyedMac(derive_seed(seed, "shared-mac")),
            SignatureScheme::Ed25519 => Scheme::Ed25519,
        };
        let validator = match s.validator {
            Validator::AcceptAll => ValidatorKind::AcceptAll,
            Validator::RejectMarked => ValidatorKind::RejectMarked,
        };
        let provider = scheme.provider();
        let idm_id = EntityId::new("idm").map_err(invalid)?;
        let idm = IdentityManager::new(idm_id.clone(), provider.keypair_from_seed(&derive_seed(seed, "idm")), provider.clone());

        let ids: Vec<EntityId> = (0..n).map(|i| EntityId::new(format!("node{i}")).expect("valid label")).collect();
        let keys: Vec<KeyPair> = (0..n).map(|i| provider.keypair_from_seed(&derive_seed(seed, &format!("node{i}")))).collect();
        let certs: Vec<_> = ids.iter().zip(&keys).map(|(id, k)| idm.certificate_for(id.clone(), k.public.clone())).collect();
        let genesis = idm.genesis(&certs, n);

        let mut roles = vec![Role::Honest; n];
        for a in &s.adversaries {
            let role = match a {
                Adversary::Spammer { .. } => Role::Spammer,
                Adversary::Lazy { .. } => Role::Lazy,
                Adversary::Colluders { .. } => Role::Colluder,
                Adversary::NotifForger { .. } => Role::Forger,
            };
            for e in a.entities() {
                roles[e] = role;
            }
        }

        let honest_config = s.ledger_config();
        let peer_config = PeerConfig { sync_interval: SimDuration::from_secs_f64(s.sync.interval), ..PeerConfig::default() };
        let mut peers = Vec::with_capacity(n);
        for i in 0..n {
            let mut config = honest_config.clone();
            config.enforce_policies = roles[i] == Role::Honest;
            let mut ledger = Ledger::new(config, provider.clone(), idm.trust_store())
                .map_err(invalid)?
                .with_validator(validator.build());
            ledger.bootstrap(&genesis).map_err(invalid)?;
            peers.push(PeerDaemon::new(
                ids[i].clone(),
                keys[i].clone(),
                KeyLocator::Cert(genesis[i].name.clone()),
                ledger,
                peer_config.clone(),
                sub_seed(seed, &format!("peer{i}")),
            ));
        }

        let mut net = Network::new(n, NetConfig::default(), sub_seed(seed, "net"));
        let spec = LinkSpec {
            latency: SimDuration::from_secs_f64(s.link.latency),
            jitter: SimDuration::from_secs_f64(s.link.jitter),
            loss: s.link.loss,
        };
        for (a, b) in s.edges() {
            net.add_link(a, b, spec.clone()).map_err(invalid)?;
        }
        for (i, id) in ids.iter().enumerate() {
            net.register_prefix(i, &notif_prefix(), Strategy::Multicast).map_err(invalid)?;
            net.register_prefix(i, &sync_prefix(), Strategy::Multicast).map_err(invalid)?;
            net.register_prefix(i, &format!("/{NAME_ROOT}/{id}"), Strategy::Unicast).map_err(invalid)?;
        }
        for p in &s.partitions {
            net.set_partition(&p.groups, SimTime::from_secs_f64(p.from), SimTime::from_secs_f64(p.to))
                .map_err(invalid)?;
        }

        let honest = roles.iter().filter(|&&r| r == Role::Honest).count();
        let header = DumpHeader {
            scheme,
            roots: vec![(idm_id, idm.public_key().clone())],
            config: honest_config,
            validator,
        };
        let mut sim = Simulation {
            metrics: MetricsLog::new(&s.name, seed, honest),
            sched: Scheduler::new(),
            net,
            peers,
            roles,
            node_of: ids.iter().cloned().enumerate().map(|(i, id)| (id, i)).collect(),
            upcalls: Vec::new(),
            workload: ChaCha8Rng::seed_from_u64(sub_seed(seed, "workload")),
            adversary_rng: ChaCha8Rng::seed_from_u64(sub_seed(seed, "adversary")),
            genesis,
            header,
            published: vec![0; n],
            colluded: vec![false; n],
            invalid_record: None,
            finished: false,
            scenario: s,
        };
        sim.schedule_start();
        Ok(sim)
    }

    fn schedule_start(&mut self) {
        self.net.start(&mut self.sched);
        for node in 0..self.peers.len() {
            let (peer, mut io) = self.split(node);
            peer.start(&mut io);
        }
        self.drain_upcalls();
        let until = self.scenario.publish_until();
        for node in 0..self.peers.len() {
            let at = SimTime::ZERO + exp_sample(&mut self.workload, self.scenario.rate);
            if at.as_secs_f64() < until {
                self.sched.schedule(at, SimEvent::Publish { node });
            }
        }
        for a in self.scenario.adversaries.clone() {
            match a {
                Adversary::Spammer { entity, rate } => {
                    let at = SimTime::ZERO + exp_sample(&mut self.adversary_rng, rate);
                    self.sched.schedule(at, SimEvent::Spam { node: entity, rate });
                }
                Adversary::NotifForger { entity, rate } => {
                    let at = SimTime::ZERO + exp_sample(&mut self.adversary_rng, rate);
                    self.sched.schedule(at, SimEvent::Forge { node: entity, rate });
                }
                Adversary::Colluders { generator, k, at } => {
                    self.sched.schedule(SimTime::from_secs_f64(at), SimEvent::Collude { generator, k, attempt: 0 });
                }
                Adversary::Lazy { .. } => {}
            }
        }
        self.sched.schedule(SimTime::from_secs_f64(self.scenario.sample_interval), SimEvent::Sample);
        if let Some(every) = self.scenario.reduction.every {
            self.sched.schedule(SimTime::from_secs_f64(every), SimEvent::Reduce);
        }
    }

    fn split(&mut self, node: NodeId) -> (&mut PeerDaemon, Io<'_>) {
        let io = Io {
            node,
            honest: self.roles[node] == Role::Honest,
            net: &mut self.net,
            sched: &mut self.sched,
            upcalls: &mut self.upcalls,
            metrics: &mut self.metrics,
        };
        (&mut self.peers[node], io)
    }

    // ----- accessors ---------------------------------------------------------

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn metrics(&self) -> &MetricsLog {
        &self.metrics
    }

    pub fn into_metrics(self) -> MetricsLog {
        self.metrics
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn peers(&self) -> &[PeerDaemon] {
        &self.peers
    }

    pub fn peer(&self, node: NodeId) -> &PeerDaemon {
        &self.peers[node]
    }

    pub fn role(&self, node: NodeId) -> Role {
        self.roles[node]
    }

    pub fn honest_nodes(&self) -> Vec<NodeId> {
        (0..self.peers.len()).filter(|&i| self.roles[i] == Role::Honest).collect()
    }

    pub fn genesis(&self) -> &[Arc<Record>] {
        &self.genesis
    }

    pub fn dump_header(&self) -> &DumpHeader {
        &self.header
    }

    /// The application-invalid record published by colluders, once it exists.
    pub fn invalid_record(&self) -> Option<&RecordName> {
        self.invalid_record.as_ref()
    }

    pub fn node_of(&self, entity: &EntityId) -> Option<NodeId> {
        self.node_of.get(entity).copied()
    }

    pub fn dump(&self, node: NodeId) -> String {
        write_dump(&self.header, self.peers[node].ledger())
    }

    pub fn dot(&self, node: NodeId) -> String {
        write_dot(self.peers[node].ledger())
    }

    /// Sorted wire encodings of everything `node` stores.
    pub fn wire_set(&self, node: NodeId) -> Vec<Vec<u8>> {
        let mut v: Vec<Vec<u8>> = self.peers[node].ledger().records().map(|r| r.to_wire()).collect();
        v.sort();
        v
    }

    /// Turns the network's packet trace on or off.
    pub fn set_trace(&mut self, on: bool) {
        self.net.set_trace(on);
    }

    /// Publishes an application record from `node` right now.
    pub fn publish_now(&mut self, node: NodeId, body: &[u8]) -> Result<RecordName, LedgerError> {
        let (peer, mut io) = self.split(node);
        let r = peer.publish(&mut io, RecordPayload::application(body.to_vec()));
        self.drain_upcalls();
        r
    }

    /// Stores `rec` at `node` and announces it, whatever it approves.
    pub fn announce_now(&mut self, node: NodeId, rec: Record) -> Admission {
        let (peer, mut io) = self.split(node);
        let adm = peer.announce(&mut io, rec);
        self.drain_upcalls();
        adm
    }

    /// An application record by `node` with a valid PoA and the given approvals.
    pub fn sign_as(&self, node: NodeId, approved: Vec<RecordName>, body: Vec<u8>) -> Record {
        let p = &self.peers[node];
        UnsignedRecord {
            generator: p.entity().clone(),
            approved,
            payload: RecordPayload::application(body),
            signer_key: p.signer().clone(),
        }
        .sign(p.ledger().provider().as_ref(), p.keys(), p.ledger().config().max_payload)
        .expect("application records encode")
    }

    // ----- running -------------------------------------------------------------

    /// Runs to the scenario's end and closes the metrics.
    pub fn run(&mut self) -> &MetricsLog {
        self.run_until(self.scenario.duration);
        self.finish();
        &self.metrics
    }

    /// Processes every event due no later than `t` seconds.
    pub fn run_until(&mut self, t: f64) {
        let end = SimTime::from_secs_f64(t.min(self.scenario.duration));
        while let Some((_, ev)) = self.sched.pop_until(end) {
            self.dispatch(ev);
            self.drain_upcalls();
        }
        self.sched.advance_to(end);
    }

    fn finish(&mut self) {
        if self.finished {
            return;
        }
        self.finished = true;
        self.metrics.links = self
            .net
            .link_counters()
            .into_iter()
            .enumerate()
            .map(|(l, counters)| {
                let (a, b) = self.net.link_ends(l).expect("link exists");
                LinkRow { a, b, counters }
            })
            .collect();
        let st = self.net.stats().clone();
        for (k, v) in [
            ("net.interests_sent", st.interests_sent),
            ("net.data_sent", st.data_sent),
            ("net.aggregated", st.aggregated),
            ("net.duplicates", st.duplicates),
            ("net.cs_hits", st.cs_hits),
            ("net.lost", st.lost),
            ("net.dropped_link_down", st.dropped_link_down),
        ] {
            self.metrics.counters.insert(k, v);
        }
        let horizon = self.scenario.publish_until() - self.scenario.liveness_grace;
        self.metrics.liveness_violations = self
            .metrics
            .records
            .iter()
            .filter(|r| r.honest && r.created < horizon && r.confirmed_at_generator.is_none())
            .count();
    }

    fn drain_upcalls(&mut self) {
        while !self.upcalls.is_empty() {
            let batch = std::mem::take(&mut self.upcalls);
            for u in batch {
                match u {
                    Upcall::Interest { node, interest } => {
                        let (peer, mut io) = self.split(node);
                        peer.on_interest(&mut io, interest);
                    }
                    Upcall::Data { node, data } => {
                        let (peer, mut io) = self.split(node);
                        peer.on_data(&mut io, data);
                    }
                    Upcall::LinkUp { node, .. } => {
                        let (peer, mut io) = self.split(node);
                        peer.on_link_up(&mut io);
                    }
                    Upcall::LinkDown { .. } => {}
                }
            }
        }
    }

    fn dispatch(&mut self, ev: SimEvent) {
        let now = self.sched.now();
        match ev {
            SimEvent::Net(e) => self.net.handle(e, &mut self.sched, &mut self.upcalls),
            SimEvent::Timer { node, timer } => {
                let (peer, mut io) = self.split(node);
                peer.on_timer(&mut io, timer);
            }
            SimEvent::Publish { node } => {
                self.publish(node);
                let next = now + exp_sample(&mut self.workload, self.scenario.rate);
                if next.as_secs_f64() < self.scenario.publish_until() {
                    self.sched.schedule(next, SimEvent::Publish { node });
                }
            }
            SimEvent::Spam { node, rate } => {
                if let Some(rec) = self.spam_record(node) {
                    let (peer, mut io) = self.split(node);
                    peer.announce(&mut io, rec);
                }
                let next = now + exp_sample(&mut self.adversary_rng, rate);
                self.sched.schedule(next, SimEvent::Spam { node, rate });
            }
            SimEvent::Forge { node, rate } => {
                self.forge_notif(node);
                let next = now + exp_sample(&mut self.adversary_rng, rate);
                self.sched.schedule(next, SimEvent::Forge { node, rate });
            }
            SimEvent::Collude { generator, k, attempt } => self.collude(generator, k, attempt),
            SimEvent::Sample => {
                for node in 0..self.peers.len() {
                    if self.roles[node] != Role::Honest {
                        continue;
                    }
                    let l = self.peers[node].ledger();
                    self.metrics.push_sample(Sample {
                        time_us: now.as_micros(),
                        peer: node,
                        unconfirmed: l.unconfirmed_len(),
                        tailing: l.tailing_len(),
                        max_depth: l.max_unconfirmed_depth(),
                    });
                }
                let next = now + SimDuration::from_secs_f64(self.scenario.sample_interval);
                self.sched.schedule(next, SimEvent::Sample);
            }
            SimEvent::Reduce => {
                let t = now.as_secs_f64();
                for p in &mut self.peers {
                    p.ledger_mut().prune_and_archive(t);
                }
                if let Some(every) = self.scenario.reduction.every {
                    self.sched.schedule(now + SimDuration::from_secs_f64(every), SimEvent::Reduce);
                }
            }
        }
    }

    fn next_body(&mut self, node: NodeId, tag: &str) -> Vec<u8> {
        self.published[node] += 1;
        format!("{} {} #{}", self.peers[node].entity(), tag, self.published[node]).into_bytes()
    }

    fn publish(&mut self, node: NodeId) {
        if self.roles[node] == Role::Lazy {
            if let Some(rec) = self.lazy_record(node) {
                let (peer, mut io) = self.split(node);
                peer.announce(&mut io, rec);
            }
            return;
        }
        let body = self.next_body(node, "data");
        let (peer, mut io) = self.split(node);
        // Failure (too few candidates) is counted by the metrics.
        let _ = peer.publish(&mut io, RecordPayload::application(body));
    }

    /// Confirmed non-genesis records in `node`'s ledger, own ones excluded.
    fn confirmed_foreign(&self, node: NodeId) -> Vec<RecordName> {
        let l = self.peers[node].ledger();
        let own = self.peers[node].entity();
        l.records()
            .filter(|r| r.generator() != own)
            .filter(|r| l.status(&r.name).is_some_and(|s| !s.genesis && s.confirmed_at.is_some()))
            .map(|r| r.name.clone())
            .collect()
    }

    fn own_records(&self, node: NodeId) -> Vec<RecordName> {
        let own = self.peers[node].entity();
        self.peers[node].ledger().records().filter(|r| r.generator() == own).map(|r| r.name.clone()).collect()
    }

    fn pick(&mut self, from: &[RecordName], k: usize) -> Option<Vec<RecordName>> {
        if from.len() < k {
            return None;
        }
        Some(index::sample(&mut self.adversary_rng, from.len(), k).into_iter().map(|i| from[i].clone()).collect())
    }

    fn lazy_record(&mut self, node: NodeId) -> Option<Record> {
        let n = self.scenario.approvals;
        let old = self.confirmed_foreign(node);
        let approved = self.pick(&old, n)?;
        let body = self.next_body(node, "lazy");
        Some(self.sign_as(node, approved, body))
    }

    /// Self-approving or stale-approving records with valid PoAs.
    fn spam_record(&mut self, node: NodeId) -> Option<Record> {
        let n = self.scenario.approvals;
        let own = self.own_records(node);
        let old = self.confirmed_foreign(node);
        let approved = match self.adversary_rng.gen_range(0..3) {
            0 => self.pick(&own, n)?,
            1 => {
                let mut a = self.pick(&own, 1)?;
                a.extend(self.pick(&old, n - 1)?);
                a
            }
            _ => self.pick(&old, n)?,
        };
        let body = self.next_body(node, "spam");
        Some(self.sign_as(node, approved, body))
    }

    fn forge_notif(&mut self, node: NodeId) {
        let victims: Vec<NodeId> = (0..self.peers.len()).filter(|&v| v != node).collect();
        let victim = victims[self.adversary_rng.gen_range(0..victims.len())];
        let mut digest = [0u8; 32];
        self.adversary_rng.fill_bytes(&mut digest);
        let mut junk = vec![0u8; 64];
        self.adversary_rng.fill_bytes(&mut junk);
        let victim_id = self.peers[victim].entity().clone();
        let (name, poa, key) = match self.adversary_rng.gen_range(0..3) {
            // Someone else's name and key, garbage signature.
            0 => (
                RecordName::new(victim_id, Digest(digest)),
                Signature(junk),
                KeyLocator::Cert(self.genesis[victim].name.clone()),
            ),
            // Someone else's name, signed with the forger's own valid key.
            1 => {
                let name = RecordName::new(victim_id, Digest(digest));
                let p = &self.peers[node];
                let poa = p.ledger().provider().sign(p.keys(), name.to_string().as_bytes());
                (name, poa, p.signer().clone())
            }
            // An entity nobody certified.
            _ => {
                let ghost = EntityId::new(format!("ghost{}", digest[0])).expect("valid label");
                (RecordName::new(ghost.clone(), Digest(digest)), Signature(junk), KeyLocator::Root(ghost))
            }
        };
        self.metrics.mark_forged(name.to_string());
        let (peer, mut io) = self.split(node);
        peer.send_notif(&mut io, &name, &poa, &key);
    }

    fn collude(&mut self, generator: NodeId, k: usize, attempt: u32) {
        let Some(x) = self.invalid_record.clone() else {
            let approved = {
                let p = &self.peers[generator];
                p.ledger().select_approvals(p.entity(), &mut self.adversary_rng)
            };
            let Ok(approved) = approved else { return };
            let mut body = b"INVALID ".to_vec();
            body.extend(self.next_body(generator, "collusion"));
            let rec = self.sign_as(generator, approved, body);
            let name = rec.name.clone();
            self.metrics.watch(name.clone());
            self.invalid_record = Some(name);
            let (peer, mut io) = self.split(generator);
            peer.announce(&mut io, rec);
            self.sched.schedule_in(SimDuration::from_secs(3), SimEvent::Collude { generator, k, attempt: 1 });
            return;
        };
        let mut waiting = false;
        for c in colluder_ids(generator, k) {
            if self.colluded[c] {
                continue;
            }
            if !self.peers[c].ledger().contains(&x) {
                waiting = true;
                continue;
            }
            let Some(tip) = self.fresh_honest_tip(c) else {
                waiting = true;
                continue;
            };
            let body = self.next_body(c, "vouch");
            let rec = self.sign_as(c, vec![x.clone(), tip], body);
            self.colluded[c] = true;
            let (peer, mut io) = self.split(c);
            peer.announce(&mut io, rec);
        }
        if waiting && attempt < 30 {
            self.sched.schedule_in(SimDuration::from_secs(1), SimEvent::Collude { generator, k, attempt: attempt + 1 });
        }
    }

    /// The most recently arrived tailing record generated by an honest peer.
    fn fresh_honest_tip(&self, node: NodeId) -> Option<RecordName> {
        let l = self.peers[node].ledger();
        l.tailing_names()
            .into_iter()
            .filter(|t| self.node_of(t.generator()).is_some_and(|g| self.roles[g] == Role::Honest))
            .filter_map(|t| l.status(&t).map(|s| (s.arrived_at, t)))
            .filter(|(_, t)| !l.status(t).is_some_and(|s| s.genesis))
            .max_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)))
            .map(|(_, t)| t)
    }
}

/// Builds and runs a scenario to completion.
pub fn run_scenario(scenario: &Scenario) -> Result<Simulation, ScenarioError> {
    let mut sim = Simulation::new(scenario)?;
    sim.run();
    Ok(sim)
}
