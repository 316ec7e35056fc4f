//! Deterministic discrete-event network of endpoints and home agents.
//!
//! The Internet is abstract: every transmission between two nodes takes
//! exactly one time unit, with no loss and no queuing. Events at the same
//! time run in insertion order.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binding::{
    BindingCache, BindingError, BindingUpdate, Mechanism, RotFlags, UpdateOutcome,
};
use crate::mechanisms::{self, EndpointContext, RoutingError, UpperLayerPacket};
use crate::packet::{Address, Body, HeaderKind, Packet, PacketError, BASE_HEADER_LEN};
use crate::scenario::{Action, Diagnostic, Role, ScenarioConfig, ScenarioError};
use crate::SimTime;

pub type NodeId = usize;

/// One Internet traversal.
pub const HOP_DELAY: SimTime = 1;

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: String,
    pub role: Role,
    /// Home address, or the agent's address for a home agent.
    pub hoa: Address,
    pub coa: Address,
    pub home_agent: Option<NodeId>,
    /// Home agents only: bindings of the mobiles they serve.
    pub registrations: BindingCache,
    /// Endpoints only: bindings learned from peers.
    pub cache: BindingCache,
    pub peers: BTreeSet<Address>,
    pub flags: RotFlags,
    pub sequence: u32,
}

impl NodeState {
    pub fn at_home(&self) -> bool {
        self.hoa == self.coa
    }

    pub fn is_home_agent(&self) -> bool {
        self.role == Role::HomeAgent
    }

    pub fn is_mobile(&self) -> bool {
        !self.is_home_agent() && self.home_agent.is_some()
    }
}

/// Bookkeeping that travels with a data packet across hops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transit {
    pub ulp_id: u64,
    pub origin: NodeId,
    pub sent_at: SimTime,
    pub mechanism: Mechanism,
    pub payload_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    /// Wire bytes arriving at `to`. `transit` is `None` for signaling.
    Deliver {
        to: NodeId,
        from: NodeId,
        bytes: Vec<u8>,
        transit: Option<Transit>,
    },
    Move {
        node: NodeId,
        new_coa: Address,
    },
    SendUlp {
        node: NodeId,
        dst_hoa: Address,
        payload: Vec<u8>,
    },
    RefreshBindings {
        node: NodeId,
    },
    BindingExpiry {
        node: NodeId,
        hoa: Address,
    },
}

impl EventKind {
    /// Expiry events only tidy caches; lookups already ignore dead entries.
    fn is_housekeeping(&self) -> bool {
        matches!(self, EventKind::BindingExpiry { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub at: SimTime,
    pub seq: u64,
    pub kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (at, seq)
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One wire transmission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: SimTime,
    pub from: String,
    pub to: String,
    pub wire_bytes: usize,
    /// Bytes beyond one base header and the original payload.
    pub mobility_bytes: usize,
    pub headers: Vec<HeaderKind>,
    pub mechanism: Mechanism,
}

impl TraceRecord {
    pub fn is_signaling(&self) -> bool {
        self.headers.contains(&HeaderKind::BindingUpdate)
    }

    /// Mobility bytes implied by the header list alone.
    pub fn header_overhead(&self) -> usize {
        self.headers
            .iter()
            .map(|h| match h {
                HeaderKind::Ipv6 => BASE_HEADER_LEN,
                HeaderKind::Type2Routing | HeaderKind::HomeAddressOption => {
                    crate::packet::EXTENSION_HEADER_LEN
                }
                HeaderKind::BindingUpdate | HeaderKind::Payload => 0,
            })
            .sum::<usize>()
            .saturating_sub(BASE_HEADER_LEN)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace record serializes")
    }
}

/// An upper-layer packet handed to its destination's transport layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub ulp_id: u64,
    pub from: String,
    pub to: String,
    pub ulp: UpperLayerPacket,
    pub sent_at: SimTime,
    pub delivered_at: SimTime,
    pub mechanism: Mechanism,
}

impl Delivery {
    pub fn latency(&self) -> SimTime {
        self.delivered_at - self.sent_at
    }
}

/// An upper-layer packet as injected by its sender.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Injected {
    pub ulp_id: u64,
    pub from: String,
    pub at: SimTime,
    pub ulp: UpperLayerPacket,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    UnknownSender,
    AmbiguousCoa,
    Misdelivery,
    /// Arrived at a node no longer holding the destination address.
    StaleLocation,
    Unroutable,
    NoBinding,
    NoHomeAgent,
    Oversize,
    Malformed,
}

impl DropReason {
    fn from_routing(err: &RoutingError) -> Self {
        match err {
            RoutingError::UnknownSender(_) => DropReason::UnknownSender,
            RoutingError::Binding(BindingError::AmbiguousCoa(_)) => DropReason::AmbiguousCoa,
            RoutingError::Binding(_) => DropReason::Malformed,
            RoutingError::Misdelivery { .. } => DropReason::Misdelivery,
            RoutingError::NoBinding(_) => DropReason::NoBinding,
            RoutingError::NoHomeAgent => DropReason::NoHomeAgent,
            RoutingError::NotData => DropReason::Malformed,
            RoutingError::Packet(PacketError::Oversize { .. }) => DropReason::Oversize,
            RoutingError::Packet(_) => DropReason::Malformed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SignalingStats {
    pub updates_sent: u64,
    pub bytes_sent: u64,
    pub stale: u64,
    pub collisions: u64,
    pub malformed: u64,
}

/// What one [`World::step`] produced.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepOutput {
    pub trace: Vec<TraceRecord>,
    pub delivered: Vec<Delivery>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("events still pending at horizon {horizon}: {}", pending.join(", "))]
    HorizonExceeded {
        horizon: SimTime,
        pending: Vec<String>,
    },
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("node {0:?} is not mobile")]
    NotMobile(String),
    #[error("node {0:?} is a home agent")]
    NotAnEndpoint(String),
    #[error("cannot schedule at {at}, simulation time is already {now}")]
    InThePast { at: SimTime, now: SimTime },
    #[error("{payload} payload bytes plus a base header exceed the {mtu}-byte MTU")]
    Oversize { payload: usize, mtu: usize },
}

#[derive(Debug, Clone)]
pub struct World {
    nodes: Vec<NodeState>,
    by_name: HashMap<String, NodeId>,
    bidirectional: bool,
    mtu: usize,
    binding_lifetime: u16,
    now: SimTime,
    queue: BinaryHeap<Event>,
    next_seq: u64,
    active_events: usize,
    next_ulp: u64,
    injected: Vec<Injected>,
    trace: Vec<TraceRecord>,
    deliveries: Vec<Delivery>,
    drops: BTreeMap<DropReason, u64>,
    signaling: SignalingStats,
}

/// Builds a world from a scenario and schedules its events.
pub fn build_world(config: &ScenarioConfig) -> Result<World, ScenarioError> {
    World::build(config)
}

impl World {
    pub fn build(config: &ScenarioConfig) -> Result<World, ScenarioError> {
        let diagnostics = config.validate();
        if !diagnostics.is_empty() {
            return Err(ScenarioError::Invalid(diagnostics));
        }
        if config.variants().len() != 1 {
            return Err(ScenarioError::Invalid(vec![Diagnostic {
                code: "multiple-runs",
                field: "compare".into(),
                message: "expand `compare` with ScenarioConfig::variants before building".into(),
            }]));
        }

        let by_name: HashMap<String, NodeId> = config
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        let flag_override = config.mechanism.and_then(Mechanism::rot_flags);
        let nodes = config
            .nodes
            .iter()
            .map(|n| NodeState {
                id: n.id.clone(),
                role: n.role,
                hoa: n.address,
                coa: n.location.unwrap_or(n.address),
                home_agent: n.home_agent.as_ref().map(|ha| by_name[ha]),
                registrations: BindingCache::new(),
                cache: BindingCache::new(),
                peers: config
                    .peerings
                    .iter()
                    .filter(|p| p.node == n.id)
                    .map(|p| p.peer)
                    .collect(),
                flags: flag_override.unwrap_or(n.flags()),
                sequence: 0,
            })
            .collect();

        let mut world = World {
            nodes,
            by_name,
            bidirectional: config.mechanism == Some(Mechanism::BidirectionalTunneling),
            mtu: config.mtu,
            binding_lifetime: config.binding_lifetime,
            now: 0,
            queue: BinaryHeap::new(),
            next_seq: 0,
            active_events: 0,
            next_ulp: 0,
            injected: Vec::new(),
            trace: Vec::new(),
            deliveries: Vec::new(),
            drops: BTreeMap::new(),
            signaling: SignalingStats::default(),
        };

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for action in &config.schedule {
            let node = world.by_name[action.node()];
            match action {
                Action::Move { at, to, .. } => world.move_node(node, *to, *at),
                Action::Send {
                    at, to, payload, ..
                } => {
                    let len = payload.resolve(world.mechanism_of(node), world.mtu);
                    let mut bytes = vec![0u8; len];
                    rng.fill_bytes(&mut bytes);
                    world.send_ulp(node, *to, bytes, *at)
                }
                Action::BuRefresh { at, .. } => world.refresh_bindings(node, *at),
            }
            .map_err(|e| {
                ScenarioError::Invalid(vec![Diagnostic {
                    code: "schedule",
                    field: action.node().to_string(),
                    message: e.to_string(),
                }])
            })?;
        }
        Ok(world)
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn mtu(&self) -> usize {
        self.mtu
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    pub fn node(&self, id: NodeId) -> &NodeState {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn deliveries(&self) -> &[Delivery] {
        &self.deliveries
    }

    pub fn injected(&self) -> &[Injected] {
        &self.injected
    }

    pub fn drops(&self) -> &BTreeMap<DropReason, u64> {
        &self.drops
    }

    pub fn total_drops(&self) -> u64 {
        self.drops.values().sum()
    }

    pub fn signaling(&self) -> &SignalingStats {
        &self.signaling
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    /// Events in pop order, for inspection.
    pub fn queued_events(&self) -> Vec<&Event> {
        let mut events: Vec<&Event> = self.queue.iter().collect();
        events.sort_by_key(|e| (e.at, e.seq));
        events
    }

    /// The trace as line-delimited JSON.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.trace {
            out.push_str(&record.to_json_line());
            out.push('\n');
        }
        out
    }

    pub fn mechanism_of(&self, node: NodeId) -> Mechanism {
        if self.bidirectional {
            Mechanism::BidirectionalTunneling
        } else {
            self.nodes[node].flags.mechanism()
        }
    }

    fn schedule(&mut self, at: SimTime, kind: EventKind) {
        if !kind.is_housekeeping() {
            self.active_events += 1;
        }
        self.queue.push(Event {
            at,
            seq: self.next_seq,
            kind,
        });
        self.next_seq += 1;
    }

    fn check_time(&self, at: SimTime) -> Result<(), SimError> {
        if at < self.now {
            return Err(SimError::InThePast { at, now: self.now });
        }
        Ok(())
    }

    fn endpoint(&self, node: NodeId) -> Result<&NodeState, SimError> {
        let state = self
            .nodes
            .get(node)
            .ok_or_else(|| SimError::UnknownNode(node.to_string()))?;
        if state.is_home_agent() {
            return Err(SimError::NotAnEndpoint(state.id.clone()));
        }
        Ok(state)
    }

    /// Schedules `node` to take `new_coa` at `at`. Moving to the home address
    /// means returning home. Binding Updates go out when the move executes.
    pub fn move_node(
        &mut self,
        node: NodeId,
        new_coa: Address,
        at: SimTime,
    ) -> Result<(), SimError> {
        self.check_time(at)?;
        let state = self.endpoint(node)?;
        if !state.is_mobile() {
            return Err(SimError::NotMobile(state.id.clone()));
        }
        self.schedule(at, EventKind::Move { node, new_coa });
        Ok(())
    }

    /// Schedules the upper layer of `node` to send `payload` to `dst_hoa`.
    pub fn send_ulp(
        &mut self,
        node: NodeId,
        dst_hoa: Address,
        payload: Vec<u8>,
        at: SimTime,
    ) -> Result<(), SimError> {
        self.check_time(at)?;
        self.endpoint(node)?;
        if payload.len() + BASE_HEADER_LEN > self.mtu {
            return Err(SimError::Oversize {
                payload: payload.len(),
                mtu: self.mtu,
            });
        }
        self.schedule(
            at,
            EventKind::SendUlp {
                node,
                dst_hoa,
                payload,
            },
        );
        Ok(())
    }

    /// Schedules `node` to re-send Binding Updates for its current location.
    pub fn refresh_bindings(&mut self, node: NodeId, at: SimTime) -> Result<(), SimError> {
        self.check_time(at)?;
        self.endpoint(node)?;
        self.schedule(at, EventKind::RefreshBindings { node });
        Ok(())
    }

    /// Executes the earliest event. `None` when the queue is empty.
    pub fn step(&mut self) -> Option<StepOutput> {
        let event = self.queue.pop()?;
        if !event.kind.is_housekeeping() {
            self.active_events -= 1;
        }
        self.now = event.at;
        let trace_mark = self.trace.len();
        let delivery_mark = self.deliveries.len();

        match event.kind {
            EventKind::Deliver {
                to, bytes, transit, ..
            } => self.on_deliver(to, &bytes, transit),
            EventKind::Move { node, new_coa } => {
                self.nodes[node].coa = new_coa;
                self.send_binding_updates(node);
            }
            EventKind::SendUlp {
                node,
                dst_hoa,
                payload,
            } => self.on_send(node, dst_hoa, payload),
            EventKind::RefreshBindings { node } => self.send_binding_updates(node),
            EventKind::BindingExpiry { node, hoa } => {
                let now = self.now;
                let state = &mut self.nodes[node];
                let cache = if state.is_home_agent() {
                    &mut state.registrations
                } else {
                    &mut state.cache
                };
                cache.remove_if_expired(hoa, now);
            }
        }

        Some(StepOutput {
            trace: self.trace[trace_mark..].to_vec(),
            delivered: self.deliveries[delivery_mark..].to_vec(),
        })
    }

    /// Steps until nothing but binding-expiry housekeeping is pending.
    pub fn run_until_quiescent(&mut self, max_time: SimTime) -> Result<(), SimError> {
        while self.active_events > 0 {
            let next_at = self
                .queue
                .peek()
                .map(|e| e.at)
                .expect("active events are queued");
            if next_at > max_time {
                let pending = self
                    .queued_events()
                    .into_iter()
                    .filter(|e| !e.kind.is_housekeeping())
                    .map(|e| format!("t={} {}", e.at, self.describe(&e.kind)))
                    .collect();
                return Err(SimError::HorizonExceeded {
                    horizon: max_time,
                    pending,
                });
            }
            self.step();
        }
        Ok(())
    }

    fn describe(&self, kind: &EventKind) -> String {
        let name = |n: NodeId| self.nodes[n].id.as_str();
        match kind {
            EventKind::Deliver { to, from, .. } => {
                format!("deliver {}->{}", name(*from), name(*to))
            }
            EventKind::Move { node, new_coa } => format!("move {} to {new_coa}", name(*node)),
            EventKind::SendUlp { node, dst_hoa, .. } => {
                format!("send {} to {dst_hoa}", name(*node))
            }
            EventKind::RefreshBindings { node } => format!("bu-refresh {}", name(*node)),
            EventKind::BindingExpiry { node, hoa } => format!("expiry {} {hoa}", name(*node)),
        }
    }

    fn drop_packet(&mut self, reason: DropReason) {
        *self.drops.entry(reason).or_default() += 1;
    }

    fn context(&self, node: NodeId) -> EndpointContext<'_> {
        let state = &self.nodes[node];
        EndpointContext {
            hoa: state.hoa,
            coa: state.coa,
            home_agent: state.home_agent.map(|ha| self.nodes[ha].hoa),
            cache: &state.cache,
            mechanism: self.mechanism_of(node),
        }
    }

    /// Which node an address currently leads to.
    ///
    /// Home agents intercept their mobiles' home addresses whenever they hold
    /// a live registration, and also when the mobile is away without one.
    fn route(&self, dst: Address) -> Option<NodeId> {
        if let Some(i) = self
            .nodes
            .iter()
            .position(|n| n.is_home_agent() && n.hoa == dst)
        {
            return Some(i);
        }
        if let Some(i) = self
            .nodes
            .iter()
            .position(|n| !n.is_home_agent() && !n.at_home() && n.coa == dst)
        {
            return Some(i);
        }
        let owner = self
            .nodes
            .iter()
            .position(|n| !n.is_home_agent() && n.hoa == dst)?;
        match self.nodes[owner].home_agent {
            Some(ha) if self.nodes[ha].registrations.lookup(dst, self.now).is_some() => Some(ha),
            Some(ha) if !self.nodes[owner].at_home() => Some(ha),
            _ => Some(owner),
        }
    }

    fn emit(
        &mut self,
        from: NodeId,
        to: NodeId,
        packet: &Packet,
        bytes: Vec<u8>,
        transit: Option<Transit>,
    ) {
        let mobility_bytes = match transit {
            Some(t) => bytes.len().saturating_sub(BASE_HEADER_LEN + t.payload_len),
            None => 0,
        };
        let mechanism = match transit {
            Some(t) => t.mechanism,
            None => self.mechanism_of(from),
        };
        self.trace.push(TraceRecord {
            time: self.now,
            from: self.nodes[from].id.clone(),
            to: self.nodes[to].id.clone(),
            wire_bytes: bytes.len(),
            mobility_bytes,
            headers: packet.header_kinds(),
            mechanism,
        });
        self.schedule(
            self.now + HOP_DELAY,
            EventKind::Deliver {
                to,
                from,
                bytes,
                transit,
            },
        );
    }

    fn transmit_data(&mut self, from: NodeId, packet: Packet, transit: Transit) {
        let bytes = match packet.encode_with_mtu(self.mtu) {
            Ok(bytes) => bytes,
            Err(PacketError::Oversize { .. }) => return self.drop_packet(DropReason::Oversize),
            Err(_) => return self.drop_packet(DropReason::Malformed),
        };
        match self.route(packet.destination()) {
            Some(to) if to != from => self.emit(from, to, &packet, bytes, Some(transit)),
            _ => self.drop_packet(DropReason::Unroutable),
        }
    }

    fn on_send(&mut self, node: NodeId, dst_hoa: Address, payload: Vec<u8>) {
        let ulp = UpperLayerPacket::new(self.nodes[node].hoa, dst_hoa, payload);
        let ulp_id = self.next_ulp;
        self.next_ulp += 1;
        self.injected.push(Injected {
            ulp_id,
            from: self.nodes[node].id.clone(),
            at: self.now,
            ulp: ulp.clone(),
        });

        let outcome = mechanisms::outbound(&ulp, &self.context(node), self.now);
        match outcome {
            Ok((packet, mechanism)) => {
                let transit = Transit {
                    ulp_id,
                    origin: node,
                    sent_at: self.now,
                    mechanism,
                    payload_len: ulp.payload.len(),
                };
                self.transmit_data(node, packet, transit);
            }
            Err(e) => self.drop_packet(DropReason::from_routing(&e)),
        }
    }

    fn send_binding_updates(&mut self, node: NodeId) {
        let lifetime = self.binding_lifetime;
        let state = &mut self.nodes[node];
        state.sequence += 1;
        let (hoa, coa, flags, sequence) = (state.hoa, state.coa, state.flags, state.sequence);
        let at_home = state.at_home();
        let peers: Vec<Address> = state.peers.iter().copied().collect();

        let mut targets = Vec::new();
        if let Some(ha) = state.home_agent {
            // returning home deregisters with the home agent only
            targets.push((ha, self.nodes[ha].hoa, if at_home { 0 } else { lifetime }));
        }
        for peer in peers {
            if let Some(target) = self
                .nodes
                .iter()
                .position(|n| !n.is_home_agent() && n.hoa == peer)
            {
                let dst = self.nodes[node]
                    .cache
                    .lookup_coa(peer, self.now)
                    .unwrap_or(peer);
                targets.push((target, dst, lifetime));
            }
        }

        for (target, dst, lifetime) in targets {
            let bu = BindingUpdate {
                hoa,
                coa,
                sequence,
                lifetime,
                rot0: flags.rot0,
                rot1: flags.rot1,
            };
            let packet = Packet::binding_update(coa, dst, bu);
            let bytes = packet
                .encode_with_mtu(self.mtu)
                .expect("binding update fits any valid MTU");
            self.signaling.updates_sent += 1;
            self.signaling.bytes_sent += bytes.len() as u64;
            self.emit(node, target, &packet, bytes, None);
        }
    }

    fn on_deliver(&mut self, to: NodeId, bytes: &[u8], transit: Option<Transit>) {
        let packet = match Packet::decode(bytes) {
            Ok(p) => p,
            Err(_) => {
                match transit {
                    Some(_) => self.drop_packet(DropReason::Malformed),
                    None => self.signaling.malformed += 1,
                }
                return;
            }
        };

        if let Body::BindingUpdate(bu) = &packet.body {
            return self.on_binding_update(to, bu);
        }
        let Some(transit) = transit else {
            self.signaling.malformed += 1;
            return;
        };

        if self.nodes[to].is_home_agent() {
            let ha = &self.nodes[to];
            match mechanisms::ha_forward(packet, ha.hoa, &ha.registrations, self.now) {
                Ok(forward) => self.transmit_data(to, forward, transit),
                Err(e) => self.drop_packet(DropReason::from_routing(&e)),
            }
            return;
        }

        if packet.destination() != self.nodes[to].coa {
            return self.drop_packet(DropReason::StaleLocation);
        }
        match mechanisms::inbound(&packet, &self.context(to), self.now) {
            Ok(ulp) => self.deliveries.push(Delivery {
                ulp_id: transit.ulp_id,
                from: self.nodes[transit.origin].id.clone(),
                to: self.nodes[to].id.clone(),
                ulp,
                sent_at: transit.sent_at,
                delivered_at: self.now,
                mechanism: transit.mechanism,
            }),
            Err(e) => self.drop_packet(DropReason::from_routing(&e)),
        }
    }

    fn on_binding_update(&mut self, node: NodeId, bu: &BindingUpdate) {
        let now = self.now;
        let state = &mut self.nodes[node];
        let cache = if state.is_home_agent() {
            &mut state.registrations
        } else {
            &mut state.cache
        };
        match cache.apply(bu, now) {
            Ok(outcome) => {
                if matches!(outcome, UpdateOutcome::Collision { .. }) {
                    self.signaling.collisions += 1;
                }
                if bu.lifetime > 0 {
                    self.schedule(
                        now + SimTime::from(bu.lifetime),
                        EventKind::BindingExpiry { node, hoa: bu.hoa },
                    );
                }
            }
            Err(BindingError::StaleSequence { .. }) => self.signaling.stale += 1,
            Err(_) => self.signaling.malformed += 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{NodeConfig, PayloadSize, Peering};

    fn addr(s: &str) -> Address {
        s.parse().unwrap()
    }

    const H_MN: &str = "2001:db8:1::10";
    const H_CN: &str = "2001:db8:2::20";

    fn two_mobiles(mechanism: Mechanism) -> ScenarioConfig {
        let node = |id: &str, role, address: &str, ha: Option<&str>| NodeConfig {
            id: id.into(),
            role,
            address: addr(address),
            home_agent: ha.map(String::from),
            location: None,
            rot1: false,
            rot0: false,
        };
        ScenarioConfig {
            version: 1,
            mtu: 1500,
            seed: 1,
            binding_lifetime: 600,
            horizon: 10_000,
            mechanism: Some(mechanism),
            compare: Vec::new(),
            nodes: vec![
                node("ha-mn", Role::HomeAgent, "2001:db8:1::1", None),
                node("ha-cn", Role::HomeAgent, "2001:db8:2::1", None),
                node("mn", Role::MobileNode, H_MN, Some("ha-mn")),
                node("cn", Role::MobileNode, H_CN, Some("ha-cn")),
            ],
            peerings: vec![
                Peering {
                    node: "mn".into(),
                    peer: addr(H_CN),
                },
                Peering {
                    node: "cn".into(),
                    peer: addr(H_MN),
                },
            ],
            schedule: Vec::new(),
        }
    }

    fn primed(mechanism: Mechanism) -> ScenarioConfig {
        let mut cfg = two_mobiles(mechanism);
        cfg.schedule = vec![
            Action::Move {
                at: 0,
                node: "mn".into(),
                to: addr("2001:db8:a::10"),
            },
            Action::Move {
                at: 0,
                node: "cn".into(),
                to: addr("2001:db8:b::20"),
            },
            Action::Send {
                at: 2,
                node: "mn".into(),
                to: addr(H_CN),
                payload: PayloadSize::Bytes(100),
            },
        ];
        cfg
    }

    #[test]
    fn build_has_empty_caches() {
        let world = World::build(&two_mobiles(Mechanism::Itro)).unwrap();
        assert_eq!(world.nodes().len(), 4);
        assert!(world
            .nodes()
            .iter()
            .all(|n| n.cache.live_entries(0).count() == 0));
        assert_eq!(world.pending_events(), 0);
    }

    #[test]
    fn build_rejects_invalid_config() {
        let mut cfg = two_mobiles(Mechanism::Itro);
        cfg.nodes[3].id = "mn".into();
        assert!(matches!(World::build(&cfg), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn move_schedules_binding_updates() {
        let mut world = World::build(&two_mobiles(Mechanism::Itro)).unwrap();
        let mn = world.node_id("mn").unwrap();
        world.move_node(mn, addr("2001:db8:a::10"), 5).unwrap();
        let out = world.step().unwrap();
        assert_eq!(out.trace.len(), 2);
        let delivers: Vec<_> = world
            .queued_events()
            .into_iter()
            .filter(|e| matches!(e.kind, EventKind::Deliver { .. }))
            .map(|e| e.at)
            .collect();
        assert_eq!(delivers, vec![6, 6]);
    }

    #[test]
    fn move_without_peers_notifies_home_agent_only() {
        let mut cfg = two_mobiles(Mechanism::Itro);
        cfg.peerings.clear();
        let mut world = World::build(&cfg).unwrap();
        let mn = world.node_id("mn").unwrap();
        world.move_node(mn, addr("2001:db8:a::10"), 0).unwrap();
        world.step();
        assert_eq!(world.pending_events(), 1);
        assert_eq!(world.trace()[0].to, "ha-mn");
    }

    #[test]
    fn move_to_same_coa_bumps_sequence_only() {
        let mut world = World::build(&two_mobiles(Mechanism::Itro)).unwrap();
        let mn = world.node_id("mn").unwrap();
        let cn = world.node_id("cn").unwrap();
        world.move_node(mn, addr("2001:db8:a::10"), 0).unwrap();
        world.move_node(mn, addr("2001:db8:a::10"), 5).unwrap();
        world.run_until_quiescent(3).unwrap_err();
        let first = *world.node(cn).cache.lookup(addr(H_MN), 1).unwrap();
        world.run_until_quiescent(100).unwrap();
        let second = *world.node(cn).cache.lookup(addr(H_MN), 6).unwrap();
        assert_eq!(first.coa, second.coa);
        assert_eq!((first.sequence, second.sequence), (1, 2));
    }

    #[test]
    fn binding_update_at_home_agent_registers() {
        let mut world = World::build(&two_mobiles(Mechanism::BidirectionalTunneling)).unwrap();
        let mn = world.node_id("mn").unwrap();
        let ha = world.node_id("ha-mn").unwrap();
        world.move_node(mn, addr("2001:db8:a::10"), 0).unwrap();
        world.step();
        let before = world.pending_events();
        // the first queued delivery is the one to the home agent
        let out = world.step().unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(
            world.node(ha).registrations.lookup_coa(addr(H_MN), 1),
            Some(addr("2001:db8:a::10"))
        );
        // one delivery consumed, one expiry scheduled
        assert_eq!(world.pending_events(), before);
    }

    #[test]
    fn ha_forward_step_schedules_one_hop() {
        let mut world = World::build(&primed(Mechanism::BidirectionalTunneling)).unwrap();
        // run up to the moment the reverse-tunnel packet reaches the home agent
        while world.trace().iter().filter(|r| !r.is_signaling()).count() < 1 {
            world.step();
        }
        let queued = world.pending_events();
        let out = world.step().unwrap();
        // next event is the reverse tunnel arriving at ha-mn
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.trace[0].from, "ha-mn");
        assert_eq!(world.pending_events(), queued);
    }

    #[test]
    fn latency_per_mechanism() {
        for (mechanism, hops) in [
            (Mechanism::BidirectionalTunneling, 3),
            (Mechanism::RouteOptimization, 1),
            (Mechanism::Tro, 1),
            (Mechanism::Itro, 1),
        ] {
            let mut world = World::build(&primed(mechanism)).unwrap();
            world.run_until_quiescent(100).unwrap();
            assert_eq!(world.deliveries().len(), 1, "{mechanism}");
            assert_eq!(world.deliveries()[0].latency(), hops, "{mechanism}");
            let data: Vec<_> = world.trace().iter().filter(|r| !r.is_signaling()).collect();
            assert_eq!(data.len() as u64, hops);
            assert_eq!(world.deliveries()[0].ulp, world.injected()[0].ulp);
        }
    }

    #[test]
    fn no_traffic_is_immediately_quiescent() {
        let mut world = World::build(&two_mobiles(Mechanism::Itro)).unwrap();
        world.run_until_quiescent(0).unwrap();
        assert!(world.trace().is_empty());
        assert!(world.step().is_none());
    }

    #[test]
    fn horizon_exceeded_reports_pending() {
        let mut world = World::build(&primed(Mechanism::Itro)).unwrap();
        match world.run_until_quiescent(1) {
            Err(SimError::HorizonExceeded { horizon, pending }) => {
                assert_eq!(horizon, 1);
                assert!(pending.iter().any(|p| p.contains("send mn")));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cold_cache_itro_falls_back_then_drops_reverse() {
        // mn knows nothing about cn; cn knows mn. cn -> mn uses ITRO and mn
        // has no binding for cn's care-of address.
        let mut cfg = two_mobiles(Mechanism::Itro);
        cfg.peerings.retain(|p| p.node == "mn");
        cfg.schedule = vec![
            Action::Move {
                at: 0,
                node: "mn".into(),
                to: addr("2001:db8:a::10"),
            },
            Action::Move {
                at: 0,
                node: "cn".into(),
                to: addr("2001:db8:b::20"),
            },
            Action::Send {
                at: 2,
                node: "mn".into(),
                to: addr(H_CN),
                payload: PayloadSize::Bytes(10),
            },
            Action::Send {
                at: 2,
                node: "cn".into(),
                to: addr(H_MN),
                payload: PayloadSize::Bytes(10),
            },
        ];
        let mut world = World::build(&cfg).unwrap();
        world.run_until_quiescent(100).unwrap();
        // mn -> cn: RO fallback, intercepted by ha-cn and tunneled on
        let mn_to_cn: Vec<_> = world
            .deliveries()
            .iter()
            .filter(|d| d.from == "mn")
            .collect();
        assert_eq!(mn_to_cn.len(), 1);
        assert_eq!(mn_to_cn[0].mechanism, Mechanism::RouteOptimization);
        assert_eq!(world.drops().get(&DropReason::UnknownSender), Some(&1));
        assert_eq!(
            world.deliveries().len() as u64 + world.total_drops(),
            world.injected().len() as u64
        );
    }

    #[test]
    fn in_flight_packet_to_old_location_is_counted() {
        let mut cfg = primed(Mechanism::Itro);
        cfg.schedule.push(Action::Move {
            at: 2,
            node: "cn".into(),
            to: addr("2001:db8:c::20"),
        });
        let mut world = World::build(&cfg).unwrap();
        world.run_until_quiescent(100).unwrap();
        assert_eq!(world.deliveries().len(), 0);
        assert_eq!(world.drops().get(&DropReason::StaleLocation), Some(&1));
    }

    #[test]
    fn trace_headers_match_mobility_bytes() {
        for mechanism in Mechanism::ALL {
            let mut world = World::build(&primed(mechanism)).unwrap();
            world.run_until_quiescent(100).unwrap();
            for record in world.trace().iter().filter(|r| !r.is_signaling()) {
                assert_eq!(
                    record.header_overhead(),
                    record.mobility_bytes,
                    "{record:?}"
                );
            }
        }
    }
}
