//! Simulated content-centric network.
//!
//! Nodes exchange named Interests and Data over point-to-point links. Each
//! node keeps a FIB (longest-prefix routes), a PIT (reverse path and
//! aggregation) and an LRU content store. Two forwarding strategies exist:
//! unicast prefixes follow the shortest path to the nearest producer, and
//! multicast prefixes are flooded with nonce suppression. Multicast Interests
//! are never answered, so they leave no PIT state.
//!
//! A flooded Interest is not re-sent to neighbours of the node it came from:
//! that node already transmitted to them (or a node before it did).

use std::collections::VecDeque;
use std::fmt;
use std::num::NonZeroUsize;
use std::sync::Arc;

use lru::LruCache;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use smallvec::SmallVec;
use thiserror::Error;

use crate::sched::Scheduler;
use crate::time::{SimDuration, SimTime};

pub type NodeId = usize;
pub type LinkId = usize;

/// Where a packet entered or leaves a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Face {
    App,
    Link(LinkId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interest {
    pub name: Arc<str>,
    pub parameter: Option<Arc<[u8]>>,
    pub nonce: u64,
    pub hop_budget: u8,
}

impl Interest {
    pub fn new(name: impl Into<Arc<str>>, nonce: u64) -> Self {
        Interest { name: name.into(), parameter: None, nonce, hop_budget: DEFAULT_HOP_BUDGET }
    }

    pub fn with_parameter(mut self, parameter: impl Into<Arc<[u8]>>) -> Self {
        self.parameter = Some(parameter.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataPacket {
    pub name: Arc<str>,
    pub content: Arc<[u8]>,
    pub signature: Arc<[u8]>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Packet {
    Interest(Interest),
    Data(DataPacket),
}

impl Packet {
    pub fn name(&self) -> &Arc<str> {
        match self {
            Packet::Interest(i) => &i.name,
            Packet::Data(d) => &d.name,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Shortest path towards the nearest registered producer.
    Unicast,
    /// Flood to every node, deliver to every registered application.
    Multicast,
}

pub const DEFAULT_HOP_BUDGET: u8 = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub pit_lifetime: SimDuration,
    pub cs_capacity: usize,
    /// Nonces remembered per node for duplicate suppression.
    pub nonce_memory: usize,
    pub trace: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            pit_lifetime: SimDuration::from_secs(4),
            cs_capacity: 1024,
            nonce_memory: 1 << 14,
            trace: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkSpec {
    pub latency: SimDuration,
    /// Extra delay drawn uniformly from `[0, jitter]` per packet.
    pub jitter: SimDuration,
    pub loss: f64,
}

impl LinkSpec {
    pub fn fixed(latency: SimDuration) -> Self {
        LinkSpec { latency, jitter: SimDuration::from_micros(0), loss: 0.0 }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown link {0}")]
    UnknownLink(LinkId),
    #[error("a link cannot connect node {0} to itself")]
    SelfLoop(NodeId),
    #[error("loss rate must lie in [0, 1]")]
    InvalidLoss,
    #[error("down window [{from}, {to}) overlaps an existing schedule on link {link}")]
    OverlappingSchedule { link: LinkId, from: SimTime, to: SimTime },
    #[error("node {0} appears in more than one partition group")]
    NodeInTwoGroups(NodeId),
    #[error("empty or inverted time window")]
    EmptyWindow,
}

/// Events the network schedules for itself.
#[derive(Clone, Debug)]
pub enum NetEvent {
    Arrive { link: LinkId, to: NodeId, packet: Packet },
    LinkState { link: LinkId, up: bool },
}

/// Deliveries from the network to node applications.
#[derive(Clone, Debug)]
pub enum Upcall {
    Interest { node: NodeId, interest: Interest },
    Data { node: NodeId, data: DataPacket },
    LinkUp { node: NodeId, link: LinkId },
    LinkDown { node: NodeId, link: LinkId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TraceKind {
    InterestOut,
    InterestIn,
    Aggregated,
    Duplicate,
    NoRoute,
    HopLimit,
    CsHit,
    ToApp,
    DataOut,
    DataIn,
    DataToApp,
    Unsolicited,
    Lost,
    LinkDownDrop,
}

impl TraceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TraceKind::InterestOut => "interest-out",
            TraceKind::InterestIn => "interest-in",
            TraceKind::Aggregated => "aggregated",
            TraceKind::Duplicate => "duplicate",
            TraceKind::NoRoute => "no-route",
            TraceKind::HopLimit => "hop-limit",
            TraceKind::CsHit => "cs-hit",
            TraceKind::ToApp => "to-app",
            TraceKind::DataOut => "data-out",
            TraceKind::DataIn => "data-in",
            TraceKind::DataToApp => "data-to-app",
            TraceKind::Unsolicited => "unsolicited",
            TraceKind::Lost => "lost",
            TraceKind::LinkDownDrop => "link-down",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub time: SimTime,
    pub node: NodeId,
    pub kind: TraceKind,
    pub name: Arc<str>,
    pub link: Option<LinkId>,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.time.as_micros(), self.node, self.kind.as_str(), self.name)?;
        if let Some(l) = self.link {
            write!(f, " link={l}")?;
        }
        Ok(())
    }
}

/// Transmissions per link (both directions).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LinkCounters {
    pub interests: u64,
    pub data: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NetStats {
    pub interests_sent: u64,
    pub data_sent: u64,
    pub delivered: u64,
    pub aggregated: u64,
    pub duplicates: u64,
    pub cs_hits: u64,
    pub no_route: u64,
    pub unsolicited: u64,
    pub lost: u64,
    pub dropped_link_down: u64,
}

#[derive(Debug)]
struct Link {
    ends: [NodeId; 2],
    spec: LinkSpec,
    up: bool,
    windows: Vec<(SimTime, SimTime)>,
    last_delivery: [SimTime; 2],
    counters: LinkCounters,
}

impl Link {
    fn other(&self, n: NodeId) -> NodeId {
        if self.ends[0] == n {
            self.ends[1]
        } else {
            self.ends[0]
        }
    }
}

#[derive(Debug)]
struct PitEntry {
    downstream: SmallVec<[Face; 2]>,
    expires: SimTime,
}

struct Node {
    links: Vec<LinkId>,
    pit: FxHashMap<Arc<str>, PitEntry>,
    pit_expiry: VecDeque<(SimTime, Arc<str>)>,
    cs: LruCache<Arc<str>, DataPacket>,
    nonces: LruCache<u64, ()>,
    /// Indices into `Network::prefixes` this node's application registered.
    local: Vec<usize>,
    /// Next hop per prefix index (unicast prefixes only).
    fib: Vec<Option<LinkId>>,
}

#[derive(Debug)]
struct Prefix {
    strategy: Strategy,
    producers: Vec<NodeId>,
}

/// The whole simulated network. All methods that send packets take the
/// scheduler that will deliver them.
pub struct Network {
    config: NetConfig,
    nodes: Vec<Node>,
    links: Vec<Link>,
    prefixes: Vec<Prefix>,
    prefix_index: FxHashMap<Arc<str>, usize>,
    /// Up-neighbour bitsets, rebuilt with the routes.
    adjacency: Vec<Vec<u64>>,
    routes_dirty: bool,
    rng: ChaCha8Rng,
    stats: NetStats,
    trace: Vec<TraceEvent>,
    partitions: Vec<(SimTime, SimTime)>,
}

impl fmt::Debug for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Network")
            .field("nodes", &self.nodes.len())
            .field("links", &self.links.len())
            .finish_non_exhaustive()
    }
}

impl Network {
    pub fn new(nodes: usize, config: NetConfig, seed: u64) -> Self {
        let cs_cap = NonZeroUsize::new(config.cs_capacity.max(1)).expect("nonzero");
        let nonce_cap = NonZeroUsize::new(config.nonce_memory.max(1)).expect("nonzero");
        let nodes = (0..nodes)
            .map(|_| Node {
                links: Vec::new(),
                pit: FxHashMap::default(),
                pit_expiry: VecDeque::new(),
                cs: LruCache::new(cs_cap),
                nonces: LruCache::new(nonce_cap),
                local: Vec::new(),
                fib: Vec::new(),
            })
            .collect();
        Network {
            config,
            nodes,
            links: Vec::new(),
            prefixes: Vec::new(),
            prefix_index: FxHashMap::default(),
            adjacency: Vec::new(),
            routes_dirty: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            stats: NetStats::default(),
            trace: Vec::new(),
            partitions: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn add_link(&mut self, a: NodeId, b: NodeId, spec: LinkSpec) -> Result<LinkId, NetError> {
        for n in [a, b] {
            if n >= self.nodes.len() {
                return Err(NetError::UnknownNode(n));
            }
        }
        if a == b {
            return Err(NetError::SelfLoop(a));
        }
        if !(0.0..=1.0).contains(&spec.loss) {
            return Err(NetError::InvalidLoss);
        }
        let id = self.links.len();
        self.links.push(Link {
            ends: [a, b],
            spec,
            up: true,
            windows: Vec::new(),
            last_delivery: [SimTime::ZERO; 2],
            counters: LinkCounters::default(),
        });
        self.nodes[a].links.push(id);
        self.nodes[b].links.push(id);
        self.routes_dirty = true;
        Ok(id)
    }

    pub fn link_ends(&self, link: LinkId) -> Option<(NodeId, NodeId)> {
        self.links.get(link).map(|l| (l.ends[0], l.ends[1]))
    }

    pub fn link_between(&self, a: NodeId, b: NodeId) -> Option<LinkId> {
        self.nodes.get(a)?.links.iter().copied().find(|&l| self.links[l].other(a) == b)
    }

    pub fn is_link_up(&self, link: LinkId) -> bool {
        self.links.get(link).is_some_and(|l| l.up)
    }

    /// Makes `node`'s application receive Interests under `prefix`.
    pub fn register_prefix(&mut self, node: NodeId, prefix: &str, strategy: Strategy) -> Result<(), NetError> {
        if node >= self.nodes.len() {
            return Err(NetError::UnknownNode(node));
        }
        let idx = match self.prefix_index.get(prefix) {
            Some(&i) => i,
            None => {
                let name: Arc<str> = prefix.into();
                self.prefixes.push(Prefix { strategy, producers: Vec::new() });
                self.prefix_index.insert(name, self.prefixes.len() - 1);
                self.prefixes.len() - 1
            }
        };
        if !self.prefixes[idx].producers.contains(&node) {
            self.prefixes[idx].producers.push(node);
            self.nodes[node].local.push(idx);
        }
        self.routes_dirty = true;
        Ok(())
    }

    /// Takes `link` down during `[from, to)`.
    pub fn schedule_link_down(&mut self, link: LinkId, from: SimTime, to: SimTime) -> Result<(), NetError> {
        if from >= to {
            return Err(NetError::EmptyWindow);
        }
        let l = self.links.get_mut(link).ok_or(NetError::UnknownLink(link))?;
        if l.windows.iter().any(|&(f, t)| from < t && f < to) {
            return Err(NetError::OverlappingSchedule { link, from, to });
        }
        l.windows.push((from, to));
        Ok(())
    }

    /// Cuts every link whose ends lie in different groups during `[from, to)`.
    /// Nodes missing from `groups` form one extra group together.
    pub fn set_partition(&mut self, groups: &[Vec<NodeId>], from: SimTime, to: SimTime) -> Result<(), NetError> {
        if from >= to {
            return Err(NetError::EmptyWindow);
        }
        let mut group_of = vec![usize::MAX; self.nodes.len()];
        for (g, members) in groups.iter().enumerate() {
            for &n in members {
                if n >= self.nodes.len() {
                    return Err(NetError::UnknownNode(n));
                }
                if group_of[n] != usize::MAX {
                    return Err(NetError::NodeInTwoGroups(n));
                }
                group_of[n] = g;
            }
        }
        if let Some(&(f, t)) = self.partitions.iter().find(|&&(f, t)| from < t && f < to) {
            return Err(NetError::OverlappingSchedule { link: usize::MAX, from: f, to: t });
        }
        let crossing: Vec<LinkId> = (0..self.links.len())
            .filter(|&l| {
                let [a, b] = self.links[l].ends;
                group_of[a] != group_of[b]
            })
            .collect();
        for &l in &crossing {
            let w = &self.links[l].windows;
            if w.iter().any(|&(f, t)| from < t && f < to) {
                return Err(NetError::OverlappingSchedule { link: l, from, to });
            }
        }
        for l in crossing {
            self.links[l].windows.push((from, to));
        }
        self.partitions.push((from, to));
        Ok(())
    }

    /// Schedules every link state change. Call once before running.
    pub fn start<E: From<NetEvent>>(&mut self, sched: &mut Scheduler<E>) {
        for (id, l) in self.links.iter().enumerate() {
            for &(from, to) in &l.windows {
                sched.schedule(from, NetEvent::LinkState { link: id, up: false }.into());
                sched.schedule(to, NetEvent::LinkState { link: id, up: true }.into());
            }
        }
    }

    pub fn stats(&self) -> &NetStats {
        &self.stats
    }

    pub fn link_counters(&self) -> Vec<LinkCounters> {
        self.links.iter().map(|l| l.counters).collect()
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn set_trace(&mut self, on: bool) {
        self.config.trace = on;
    }

    pub fn clear_trace(&mut self) {
        self.trace.clear();
    }

    pub fn cs_contains(&self, node: NodeId, name: &str) -> bool {
        self.nodes[node].cs.contains(name)
    }

    pub fn cs_len(&self, node: NodeId) -> usize {
        self.nodes[node].cs.len()
    }

    pub fn pit_len(&self, node: NodeId, now: SimTime) -> usize {
        self.nodes[node].pit.values().filter(|e| e.expires > now).count()
    }

    /// Next-hop link from `node` for a unicast `name`.
    pub fn next_hop(&mut self, node: NodeId, name: &str) -> Option<LinkId> {
        self.refresh_routes();
        let (idx, strategy) = self.lookup(name)?;
        match strategy {
            Strategy::Unicast => self.nodes[node].fib[idx],
            Strategy::Multicast => None,
        }
    }

    // ----- packet entry points ---------------------------------------------

    /// An application on `node` expresses an Interest.
    pub fn express_interest<E: From<NetEvent>>(
        &mut self,
        node: NodeId,
        interest: Interest,
        sched: &mut Scheduler<E>,
        upcalls: &mut Vec<Upcall>,
    ) {
        self.on_interest(node, interest, Face::App, sched, upcalls);
    }

    /// An application on `node` answers a pending Interest.
    pub fn put_data<E: From<NetEvent>>(
        &mut self,
        node: NodeId,
        data: DataPacket,
        sched: &mut Scheduler<E>,
        upcalls: &mut Vec<Upcall>,
    ) {
        self.on_data(node, data, Face::App, sched, upcalls);
    }

    pub fn handle<E: From<NetEvent>>(
        &mut self,
        event: NetEvent,
        sched: &mut Scheduler<E>,
        upcalls: &mut Vec<Upcall>,
    ) {
        match event {
            NetEvent::Arrive { link, to, packet } => {
                if !self.links[link].up {
                    self.stats.dropped_link_down += 1;
                    self.log(sched.now(), to, TraceKind::LinkDownDrop, packet.name(), Some(link));
                    return;
                }
                self.stats.delivered += 1;
                match packet {
                    Packet::Interest(i) => self.on_interest(to, i, Face::Link(link), sched, upcalls),
                    Packet::Data(d) => self.on_data(to, d, Face::Link(link), sched, upcalls),
                }
            }
            NetEvent::LinkState { link, up } => {
                let l = &mut self.links[link];
                if l.up == up {
                    return;
                }
                l.up = up;
                self.routes_dirty = true;
                for node in self.links[link].ends {
                    upcalls.push(if up { Upcall::LinkUp { node, link } } else { Upcall::LinkDown { node, link } });
                }
            }
        }
    }

    // ----- forwarding ------------------------------------------------------

    fn on_interest<E: From<NetEvent>>(
        &mut self,
        node: NodeId,
        interest: Interest,
        face: Face,
        sched: &mut Scheduler<E>,
        upcalls: &mut Vec<Upcall>,
    ) {
        let now = sched.now();
        self.refresh_routes();
        let in_link = match face {
            Face::Link(l) => Some(l),
            Face::App => None,
        };
        if face != Face::App {
            self.log(now, node, TraceKind::InterestIn, &interest.name, in_link);
        }
        if self.nodes[node].nonces.put(interest.nonce, ()).is_some() {
            self.stats.duplicates += 1;
            self.log(now, node, TraceKind::Duplicate, &interest.name, in_link);
            return;
        }
        let Some((idx, strategy)) = self.lookup(&interest.name) else {
            self.stats.no_route += 1;
            self.log(now, node, TraceKind::NoRoute, &interest.name, None);
            return;
        };
        if strategy == Strategy::Multicast {
            self.flood(node, interest, in_link, idx, sched, upcalls);
            return;
        }

        if let Some(data) = self.nodes[node].cs.get(&interest.name).cloned() {
            self.stats.cs_hits += 1;
            self.log(now, node, TraceKind::CsHit, &interest.name, in_link);
            self.emit_data(node, data, face, sched, upcalls);
            return;
        }

        self.expire_pit(node, now);
        let lifetime = self.config.pit_lifetime;
        if let Some(entry) = self.nodes[node].pit.get_mut(&interest.name) {
            if entry.expires > now {
                if !entry.downstream.contains(&face) {
                    entry.downstream.push(face);
                    self.stats.aggregated += 1;
                    self.log(now, node, TraceKind::Aggregated, &interest.name, in_link);
                    return;
                }
                // Same downstream asking again: a retransmission, forward anew.
                entry.expires = now + lifetime;
            } else {
                entry.downstream.clear();
                entry.downstream.push(face);
                entry.expires = now + lifetime;
            }
        } else {
            self.nodes[node]
                .pit
                .insert(interest.name.clone(), PitEntry { downstream: SmallVec::from_elem(face, 1), expires: now + lifetime });
        }
        let expires = now + lifetime;
        self.nodes[node].pit_expiry.push_back((expires, interest.name.clone()));

        if self.nodes[node].local.contains(&idx) && face != Face::App {
            self.log(now, node, TraceKind::ToApp, &interest.name, None);
            upcalls.push(Upcall::Interest { node, interest });
            return;
        }
        let Some(link) = self.nodes[node].fib[idx] else {
            self.stats.no_route += 1;
            self.log(now, node, TraceKind::NoRoute, &interest.name, None);
            self.nodes[node].pit.remove(&interest.name);
            return;
        };
        if interest.hop_budget == 0 {
            self.log(now, node, TraceKind::HopLimit, &interest.name, None);
            self.nodes[node].pit.remove(&interest.name);
            return;
        }
        let mut fwd = interest;
        fwd.hop_budget -= 1;
        self.transmit(node, link, Packet::Interest(fwd), sched);
    }

    fn flood<E: From<NetEvent>>(
        &mut self,
        node: NodeId,
        interest: Interest,
        in_link: Option<LinkId>,
        prefix: usize,
        sched: &mut Scheduler<E>,
        upcalls: &mut Vec<Upcall>,
    ) {
        let now = sched.now();
        if in_link.is_some() && self.nodes[node].local.contains(&prefix) {
            self.log(now, node, TraceKind::ToApp, &interest.name, None);
            upcalls.push(Upcall::Interest { node, interest: interest.clone() });
        }
        if interest.hop_budget == 0 {
            self.log(now, node, TraceKind::HopLimit, &interest.name, None);
            return;
        }
        let sender = in_link.map(|l| self.links[l].other(node));
        let mut fwd = interest;
        fwd.hop_budget -= 1;
        let links = self.nodes[node].links.clone();
        for l in links {
            if !self.links[l].up || Some(l) == in_link {
                continue;
            }
            let peer = self.links[l].other(node);
            if let Some(s) = sender {
                if peer == s || self.adjacent(s, peer) {
                    continue;
                }
            }
            self.transmit(node, l, Packet::Interest(fwd.clone()), sched);
        }
    }

    fn on_data<E: From<NetEvent>>(
        &mut self,
        node: NodeId,
        data: DataPacket,
        face: Face,
        sched: &mut Scheduler<E>,
        upcalls: &mut Vec<Upcall>,
    ) {
        let now = sched.now();
        let in_link = match face {
            Face::Link(l) => Some(l),
            Face::App => None,
        };
        if face != Face::App {
            self.log(now, node, TraceKind::DataIn, &data.name, in_link);
        }
        let entry = match self.nodes[node].pit.remove(&data.name) {
            Some(e) if e.expires > now => e,
            _ => {
                self.stats.unsolicited += 1;
                self.log(now, node, TraceKind::Unsolicited, &data.name, in_link);
                return;
            }
        };
        self.nodes[node].cs.put(data.name.clone(), data.clone());
        for down in entry.downstream {
            if down != face {
                self.emit_data(node, data.clone(), down, sched, upcalls);
            }
        }
    }

    fn emit_data<E: From<NetEvent>>(
        &mut self,
        node: NodeId,
        data: DataPacket,
        face: Face,
        sched: &mut Scheduler<E>,
        upcalls: &mut Vec<Upcall>,
    ) {
        match face {
            Face::App => {
                self.log(sched.now(), node, TraceKind::DataToApp, &data.name, None);
                upcalls.push(Upcall::Data { node, data });
            }
            Face::Link(l) => self.transmit(node, l, Packet::Data(data), sched),
        }
    }

    fn transmit<E: From<NetEvent>>(&mut self, from: NodeId, link: LinkId, packet: Packet, sched: &mut Scheduler<E>) {
        let now = sched.now();
        let is_interest = matches!(packet, Packet::Interest(_));
        let kind = if is_interest { TraceKind::InterestOut } else { TraceKind::DataOut };
        self.log(now, from, kind, packet.name(), Some(link));
        let l = &mut self.links[link];
        if !l.up {
            self.stats.dropped_link_down += 1;
            let name = packet.name().clone();
            self.log(now, from, TraceKind::LinkDownDrop, &name, Some(link));
            return;
        }
        if is_interest {
            l.counters.interests += 1;
            self.stats.interests_sent += 1;
        } else {
            l.counters.data += 1;
            self.stats.data_sent += 1;
        }
        if l.spec.loss > 0.0 && self.rng.gen::<f64>() < l.spec.loss {
            self.stats.lost += 1;
            let name = packet.name().clone();
            self.log(now, from, TraceKind::Lost, &name, Some(link));
            return;
        }
        let jitter = l.spec.jitter.as_micros();
        let extra = if jitter > 0 { self.rng.gen_range(0..=jitter) } else { 0 };
        let dir = usize::from(l.ends[0] != from);
        let at = (now + l.spec.latency + SimDuration::from_micros(extra)).max(l.last_delivery[dir]);
        l.last_delivery[dir] = at;
        let to = l.other(from);
        sched.schedule(at, NetEvent::Arrive { link, to, packet }.into());
    }

    // ----- tables ----------------------------------------------------------

    /// Longest registered prefix of `name`, by whole components.
    fn lookup(&self, name: &str) -> Option<(usize, Strategy)> {
        let mut end = name.len();
        loop {
            if let Some(&i) = self.prefix_index.get(&name[..end]) {
                return Some((i, self.prefixes[i].strategy));
            }
            end = name[..end].rfind('/')?;
            if end == 0 {
                return None;
            }
        }
    }

    fn expire_pit(&mut self, node: NodeId, now: SimTime) {
        let n = &mut self.nodes[node];
        while let Some((t, _)) = n.pit_expiry.front() {
            if *t > now {
                break;
            }
            let (_, name) = n.pit_expiry.pop_front().expect("peeked");
            if n.pit.get(&name).is_some_and(|e| e.expires <= now) {
                n.pit.remove(&name);
            }
        }
    }

    fn adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency[a].get(b / 64).is_some_and(|w| w & (1 << (b % 64)) != 0)
    }

    fn refresh_routes(&mut self) {
        if !self.routes_dirty {
            return;
        }
        self.routes_dirty = false;
        let n = self.nodes.len();
        self.adjacency = vec![vec![0u64; n.div_ceil(64)]; n];
        for l in self.links.iter().filter(|l| l.up) {
            let [a, b] = l.ends;
            self.adjacency[a][b / 64] |= 1 << (b % 64);
            self.adjacency[b][a / 64] |= 1 << (a % 64);
        }
        for node in &mut self.nodes {
            node.fib = vec![None; self.prefixes.len()];
        }
        for (idx, p) in self.prefixes.iter().enumerate() {
            if p.strategy != Strategy::Unicast {
                continue;
            }
            // Multi-source BFS from the producers over up links.
            let mut dist = vec![usize::MAX; n];
            let mut queue = VecDeque::new();
            for &s in &p.producers {
                dist[s] = 0;
                queue.push_back(s);
            }
            while let Some(u) = queue.pop_front() {
                for &l in &self.nodes[u].links {
                    let link = &self.links[l];
                    let v = link.other(u);
                    if link.up && dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            for u in 0..n {
                if dist[u] == 0 || dist[u] == usize::MAX {
                    continue;
                }
                // Lowest link id among shortest-path next hops.
                let best = self.nodes[u]
                    .links
                    .iter()
                    .copied()
                    .filter(|&l| self.links[l].up && dist[self.links[l].other(u)] == dist[u] - 1)
                    .min();
                self.nodes[u].fib[idx] = best;
            }
        }
    }

    fn log(&mut self, time: SimTime, node: NodeId, kind: TraceKind, name: &Arc<str>, link: Option<LinkId>) {
        if self.config.trace {
            self.trace.push(TraceEvent { time, node, kind, name: name.clone(), link });
        }
    }
}
