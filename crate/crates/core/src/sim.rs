//! Single-threaded discrete-event simulator over a virtual millisecond clock.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};
use core::fmt::Write;

use sha2::{Digest, Sha256};

use crate::overlay::{
    Delivery, Membership, MessageBody, MessageKind, OverlayError, OverlayMessage, PeerId, TransportModel,
};
use crate::peer::{Action, PeerConfig, PeerError, PeerFault, PeerNode, QueryStatus, SubmitError};
use crate::query_state::Uqi;
use crate::storage::Catalog;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub peer: PeerConfig,
    pub transport: TransportModel,
    /// Keep every event-log line in memory, not only the running digest.
    pub keep_log: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error(transparent)]
    Submit(#[from] SubmitError),
    #[error(transparent)]
    Peer(#[from] PeerError),
    #[error("peer {0} is not a live member")]
    NotLive(PeerId),
}

/// Message counts for one uqi.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Traffic {
    pub queries_sent: u64,
    pub results_sent: u64,
    pub queries_dropped: u64,
    pub results_dropped: u64,
    /// ResultReturns delivered to the query's initiator.
    pub initiator_inbound: u64,
}

impl Traffic {
    pub fn messages_total(&self) -> u64 {
        self.queries_sent + self.results_sent
    }

    fn add(&mut self, o: &Traffic) {
        self.queries_sent += o.queries_sent;
        self.results_sent += o.results_sent;
        self.queries_dropped += o.queries_dropped;
        self.results_dropped += o.results_dropped;
        self.initiator_inbound += o.initiator_inbound;
    }
}

#[derive(Debug, Clone)]
enum Event {
    Deliver(OverlayMessage),
    Timer { peer: PeerId, uqi: Uqi },
    Join { peer: PeerId, catalog: Catalog },
    Leave { peer: PeerId },
}

#[derive(Debug)]
struct Scheduled {
    at: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

pub struct Simulator {
    config: SimConfig,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<Scheduled>>,
    ring: Membership,
    peers: BTreeMap<PeerId, PeerNode>,
    departed: BTreeSet<PeerId>,
    faults: BTreeMap<PeerId, PeerFault>,
    initiators: BTreeMap<Uqi, PeerId>,
    traffic: BTreeMap<Uqi, Traffic>,
    hasher: Sha256,
    log: Vec<String>,
    events: u64,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Self {
        Simulator {
            config,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            ring: Membership::new(),
            peers: BTreeMap::new(),
            departed: BTreeSet::new(),
            faults: BTreeMap::new(),
            initiators: BTreeMap::new(),
            traffic: BTreeMap::new(),
            hasher: Sha256::new(),
            log: Vec::new(),
            events: 0,
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn membership(&self) -> &Membership {
        &self.ring
    }

    pub fn peer(&self, id: PeerId) -> Option<&PeerNode> {
        self.peers.get(&id)
    }

    pub fn peers(&self) -> impl Iterator<Item = &PeerNode> {
        self.peers.values()
    }

    pub fn is_live(&self, id: PeerId) -> bool {
        self.ring.contains(id)
    }

    /// Join `id` at the current time.
    pub fn add_peer(&mut self, id: PeerId, catalog: Catalog) -> Result<(), SimError> {
        self.ring.join(id)?;
        self.departed.remove(&id);
        let mut node = PeerNode::new(id, catalog, self.config.peer);
        node.fault = self.faults.get(&id).copied().unwrap_or_default();
        self.peers.insert(id, node);
        self.log_line("join", id, id, None);
        Ok(())
    }

    pub fn set_fault(&mut self, id: PeerId, fault: PeerFault) {
        self.faults.insert(id, fault);
        if let Some(p) = self.peers.get_mut(&id) {
            p.fault = fault;
        }
    }

    pub fn schedule_join(&mut self, at: u64, peer: PeerId, catalog: Catalog) {
        self.push(at, Event::Join { peer, catalog });
    }

    /// Fail-stop departure at `at`: the peer stops processing and messages
    /// addressed to it are dropped.
    pub fn schedule_leave(&mut self, at: u64, peer: PeerId) {
        self.push(at, Event::Leave { peer });
    }

    /// Submit `sql` to `initiator` at the current virtual time.
    pub fn submit(&mut self, initiator: PeerId, sql: &str, ttl: u64) -> Result<Uqi, SimError> {
        if !self.ring.contains(initiator) {
            return Err(SimError::NotLive(initiator));
        }
        let node = self.peers.get_mut(&initiator).expect("live peers have nodes");
        let mut out = Vec::new();
        let uqi = node.submit_query(self.now, &self.ring, sql, ttl, &mut out)?;
        for phase in node.phase_uqis(&uqi) {
            self.initiators.insert(phase, initiator);
        }
        self.log_line("submit", initiator, initiator, Some(uqi));
        self.apply(initiator, out);
        Ok(uqi)
    }

    pub fn fetch(&self, peer: PeerId, uqi: &Uqi) -> Result<QueryStatus, SimError> {
        let node = self.peers.get(&peer).ok_or(SimError::NotLive(peer))?;
        Ok(node.fetch_results(uqi)?)
    }

    /// Process events up to and including `horizon`. Returns true when the
    /// queue drained (quiescence).
    pub fn run_until(&mut self, horizon: u64) -> bool {
        while let Some(Reverse(next)) = self.queue.peek() {
            if next.at > horizon {
                self.now = self.now.max(horizon);
                return false;
            }
            let Reverse(s) = self.queue.pop().expect("peeked");
            self.now = s.at;
            self.dispatch(s.event);
        }
        self.now = self.now.max(horizon);
        true
    }

    /// Messages exchanged for `uqis`, summed.
    pub fn traffic(&self, uqis: &[Uqi]) -> Traffic {
        let mut t = Traffic::default();
        for u in uqis {
            if let Some(x) = self.traffic.get(u) {
                t.add(x);
            }
        }
        t
    }

    pub fn events_processed(&self) -> u64 {
        self.events
    }

    /// SHA-256 over every event-log line so far, hex.
    pub fn digest(&self) -> String {
        let mut s = String::with_capacity(64);
        for b in self.hasher.clone().finalize().iter() {
            let _ = write!(s, "{b:02x}");
        }
        s
    }

    pub fn log_lines(&self) -> &[String] {
        &self.log
    }

    fn push(&mut self, at: u64, event: Event) {
        self.seq += 1;
        self.queue.push(Reverse(Scheduled { at, seq: self.seq, event }));
    }

    fn log_line(&mut self, kind: &str, src: PeerId, dst: PeerId, uqi: Option<Uqi>) {
        let line = match uqi {
            Some(u) => format!("{},{kind},{src},{dst},{u}", self.now),
            None => format!("{},{kind},{src},{dst},", self.now),
        };
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        if self.config.keep_log {
            self.log.push(line);
        }
    }

    fn dispatch(&mut self, event: Event) {
        self.events += 1;
        match event {
            Event::Join { peer, catalog } => {
                let _ = self.add_peer(peer, catalog);
            }
            Event::Leave { peer } => {
                if self.ring.leave(peer).is_ok() {
                    self.departed.insert(peer);
                    self.log_line("leave", peer, peer, None);
                }
            }
            Event::Timer { peer, uqi } => {
                if !self.ring.contains(peer) {
                    return;
                }
                let mut out = Vec::new();
                if let Some(node) = self.peers.get_mut(&peer) {
                    node.on_timer(self.now, &self.ring, uqi, &mut out);
                }
                self.apply(peer, out);
            }
            Event::Deliver(msg) => self.deliver(msg),
        }
    }

    fn deliver(&mut self, msg: OverlayMessage) {
        let (dst, src, uqi, kind) = (msg.dst, msg.src, msg.uqi(), msg.kind());
        if !self.ring.contains(dst) {
            self.count_drop(uqi, kind);
            self.log_line(drop_kind(kind), src, dst, Some(uqi));
            return;
        }
        self.log_line(recv_kind(kind), src, dst, Some(uqi));
        if kind == MessageKind::Result && self.initiators.get(&uqi) == Some(&dst) {
            self.traffic.entry(uqi).or_default().initiator_inbound += 1;
        }
        let mut out = Vec::new();
        let node = self.peers.get_mut(&dst).expect("live peers have nodes");
        match msg.body {
            MessageBody::QueryBroadcast { uqi, sql, ttl, sender_key, initiator } => {
                node.handle_broadcast(self.now, &self.ring, sender_key, uqi, &sql, ttl, initiator, &mut out);
            }
            MessageBody::ResultReturn { uqi, payload, .. } => {
                node.handle_result(self.now, &self.ring, uqi, payload, &mut out);
            }
        }
        self.apply(dst, out);
    }

    fn apply(&mut self, from: PeerId, actions: Vec<Action>) {
        for a in actions {
            match a {
                Action::Timer { at, uqi } => self.push(at, Event::Timer { peer: from, uqi }),
                Action::Send(msg) => {
                    let (uqi, kind) = (msg.uqi(), msg.kind());
                    if let MessageBody::QueryBroadcast { initiator, .. } = &msg.body {
                        self.initiators.entry(uqi).or_insert(*initiator);
                    }
                    let t = self.traffic.entry(uqi).or_default();
                    match kind {
                        MessageKind::Query => t.queries_sent += 1,
                        MessageKind::Result => t.results_sent += 1,
                    }
                    self.log_line(send_kind(kind), msg.src, msg.dst, Some(uqi));
                    match self.config.transport.send(&msg, 0) {
                        Delivery::At(at) => self.push(at, Event::Deliver(msg)),
                        Delivery::Dropped => {
                            self.count_drop(uqi, kind);
                            self.log_line(drop_kind(kind), msg.src, msg.dst, Some(uqi));
                        }
                    }
                }
            }
        }
    }

    fn count_drop(&mut self, uqi: Uqi, kind: MessageKind) {
        let t = self.traffic.entry(uqi).or_default();
        match kind {
            MessageKind::Query => t.queries_dropped += 1,
            MessageKind::Result => t.results_dropped += 1,
        }
    }
}

fn send_kind(k: MessageKind) -> &'static str {
    match k {
        MessageKind::Query => "send_query",
        MessageKind::Result => "send_result",
    }
}

fn recv_kind(k: MessageKind) -> &'static str {
    match k {
        MessageKind::Query => "recv_query",
        MessageKind::Result => "recv_result",
    }
}

fn drop_kind(k: MessageKind) -> &'static str {
    match k {
        MessageKind::Query => "drop_query",
        MessageKind::Result => "drop_result",
    }
}
