//! Hand-driven forwarding network with a producer that answers at once.

use std::sync::Arc;

use dledger::net::{DataPacket, Interest, LinkSpec, NetConfig, NetEvent, Network, NodeId, Strategy, TraceKind, Upcall};
use dledger::sched::Scheduler;
use dledger::time::{SimDuration, SimTime};

pub const A: NodeId = 0;
pub const B: NodeId = 1;
pub const C: NodeId = 2;
pub const D: NodeId = 3;
pub const E: NodeId = 4;
pub const F: NodeId = 5;
pub const G: NodeId = 6;

pub fn ms(v: u64) -> SimTime {
    SimTime::from_micros(v * 1000)
}

pub struct Bench {
    pub net: Network,
    pub sched: Scheduler<NetEvent>,
    producers: Vec<NodeId>,
    /// `(node, name)` for every Data handed to an application.
    pub delivered: Vec<(NodeId, String)>,
    pub producer_hits: usize,
    nonce: u64,
}

impl Bench {
    pub fn new(nodes: usize, links: &[(NodeId, NodeId)], producers: &[NodeId]) -> Bench {
        let mut net = Network::new(nodes, NetConfig { trace: true, ..NetConfig::default() }, 1);
        for &(a, b) in links {
            net.add_link(a, b, LinkSpec::fixed(SimDuration::from_millis(10))).unwrap();
        }
        for &p in producers {
            net.register_prefix(p, "/DLedger/a", Strategy::Unicast).unwrap();
        }
        Bench {
            net,
            sched: Scheduler::new(),
            producers: producers.to_vec(),
            delivered: Vec::new(),
            producer_hits: 0,
            nonce: 0,
        }
    }

    /// Topology with producer A and consumers F and G behind E.
    pub fn figure() -> Bench {
        // C-E is added before B-E and D-E, so E's shortest path to A runs via C.
        let links = [(A, B), (A, C), (A, D), (C, E), (B, E), (D, E), (E, F), (E, G)];
        Bench::new(7, &links, &[A])
    }

    pub fn express(&mut self, node: NodeId, name: &str) {
        self.nonce += 1;
        let mut up = Vec::new();
        self.net.express_interest(node, Interest::new(name, self.nonce), &mut self.sched, &mut up);
        self.serve(up);
    }

    fn serve(&mut self, upcalls: Vec<Upcall>) {
        for u in upcalls {
            match u {
                Upcall::Interest { node, interest } if self.producers.contains(&node) => {
                    self.producer_hits += 1;
                    let data = DataPacket {
                        name: interest.name.clone(),
                        content: Arc::from(&b"payload"[..]),
                        signature: Arc::from(&b"sig"[..]),
                    };
                    let mut up = Vec::new();
                    self.net.put_data(node, data, &mut self.sched, &mut up);
                    self.serve(up);
                }
                Upcall::Data { node, data } => self.delivered.push((node, data.name.to_string())),
                _ => {}
            }
        }
    }

    pub fn run_until(&mut self, t: SimTime) {
        while let Some((_, ev)) = self.sched.pop_until(t) {
            let mut up = Vec::new();
            self.net.handle(ev, &mut self.sched, &mut up);
            self.serve(up);
        }
        self.sched.advance_to(t);
    }

    pub fn count(&self, node: NodeId, kind: TraceKind) -> usize {
        self.net.trace().iter().filter(|e| e.node == node && e.kind == kind).count()
    }
}
