//! Per-node protocol state machine: the send path (graph, encode,
//! transmit), the receive path (decode, then deliver, forward or store),
//! reception reports, pseudo-broadcast acknowledgements and retries.

mod frame;

pub use frame::{airtime, Frame, FrameKind};

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::coding::{
    edge_weight, plan_for, select_encoding, BeliefTable, CodingContext, EncodingPlan, NeighbourBelief, PuObservation,
    DEFAULT_THETA, DEFAULT_WINDOW,
};
use crate::pu::{p_active, Position, PuProcess};
use crate::types::{
    xor_combine, ChannelId, NativePacket, NodeId, OutputQueue, PacketId, PacketPool, QueuedPacket, ReceptionReport,
    SimTime, DEFAULT_PACKET_BYTES, DEFAULT_POOL_CAPACITY, DEFAULT_POOL_TTL, DEFAULT_QUEUE_CAPACITY,
};
use crate::wire::{lambda_to_q8_8, p_link_to_u16, q8_8_to_lambda, u16_to_p_link, PunchHeader, MAX_BLOCK_LEN};

/// Forwarding discipline under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    /// PU-aware coding.
    Punch,
    /// Same stack with coding disabled.
    Baseline,
    /// Coding with the PU term of the edge weight forced to zero.
    PuIgnore,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Punch, Mode::Baseline, Mode::PuIgnore];

    pub fn label(self) -> &'static str {
        match self {
            Mode::Punch => "PUNCH",
            Mode::Baseline => "BASELINE",
            Mode::PuIgnore => "PU_IGNORE",
        }
    }

    pub fn codes(self) -> bool {
        self != Mode::Baseline
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauName {
    Airtime,
}

/// Window used for the PU activation probability in edge weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauPolicy {
    /// Airtime of a native data frame on the link.
    Named(TauName),
    /// Fixed window in seconds.
    Fixed(f64),
}

impl Default for TauPolicy {
    fn default() -> Self {
        TauPolicy::Named(TauName::Airtime)
    }
}

/// Protocol constants shared by every node of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    pub mode: Mode,
    pub theta: f64,
    pub window: usize,
    pub tau: TauPolicy,
    pub ack_timeout: f64,
    pub max_retries: u32,
    /// How long a forwarder with no coding partner waits before sending a
    /// forwarded packet natively. Zero disables holding.
    pub coding_hold: f64,
    pub bitrate_bps: f64,
    /// MAC and IP header bytes added to every frame.
    pub mac_overhead_bytes: u32,
    /// PHY preamble and header time on every frame.
    pub phy_overhead: f64,
    /// RTS, CTS, ACK and the SIFS gaps around a unicast frame.
    pub unicast_exchange: f64,
    pub packet_bytes: u32,
    /// Most recent pool ids piggybacked on each data frame.
    pub piggyback_report_ids: usize,
    /// How long a received packet id is remembered for duplicate suppression.
    pub dedup_horizon: f64,
    pub pool_ttl: f64,
    pub pool_capacity: usize,
    pub queue_capacity: usize,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            mode: Mode::Punch,
            theta: DEFAULT_THETA,
            window: DEFAULT_WINDOW,
            tau: TauPolicy::default(),
            ack_timeout: 0.25,
            max_retries: 4,
            coding_hold: 0.02,
            bitrate_bps: 1_000_000.0,
            mac_overhead_bytes: 48,
            phy_overhead: 192e-6,
            unicast_exchange: 990e-6,
            packet_bytes: DEFAULT_PACKET_BYTES,
            piggyback_report_ids: 32,
            dedup_horizon: 10.0,
            pool_ttl: DEFAULT_POOL_TTL,
            pool_capacity: DEFAULT_POOL_CAPACITY,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
        }
    }
}

impl ProtocolParams {
    /// Channel time of a frame carrying `bytes` above the MAC header.
    pub fn frame_time(&self, bytes: u32, unicast: bool) -> f64 {
        let exchange = if unicast { self.unicast_exchange } else { 0.0 };
        airtime(bytes + self.mac_overhead_bytes, self.bitrate_bps) + self.phy_overhead + exchange
    }

    /// Channel time of a native data frame with an empty PUNCH header.
    pub fn native_airtime(&self) -> f64 {
        self.frame_time(self.packet_bytes + PunchHeader::default().encoded_len() as u32, true)
    }

    pub fn tau_seconds(&self) -> f64 {
        match self.tau {
            TauPolicy::Named(TauName::Airtime) => self.native_airtime(),
            TauPolicy::Fixed(t) => t,
        }
    }
}

/// Read-only surroundings a node consults: the PU roster (for sensing and
/// for mapping PU indices to channels) and protocol constants.
#[derive(Debug, Clone, Copy)]
pub struct NodeEnv<'a> {
    pub pus: &'a [PuProcess],
    pub params: &'a ProtocolParams,
    pub tracing: bool,
}

/// State changes a node reports back to the simulator.
#[derive(Debug, Default)]
pub struct Effects {
    pub delivered: Vec<NativePacket>,
    pub enqueued: Vec<NativePacket>,
    pub overflowed: Vec<NativePacket>,
    /// Packets removed from the local queue after an acknowledgement.
    pub acked: Vec<NativePacket>,
    pub dropped_retry: Vec<NativePacket>,
    pub timers: Vec<AckTimer>,
    pub retransmissions: u32,
    pub recovered: u32,
    pub undecodable: u32,
    pub duplicates: u32,
    pub decode_mismatches: u32,
    pub trace: Vec<(&'static str, serde_json::Value)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AckTimer {
    pub pid: PacketId,
    pub deadline: SimTime,
    pub generation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingAck {
    pub deadline: SimTime,
    pub generation: u64,
    /// Acked by the MAC of the unicast destination rather than by a report.
    pub link_layer: bool,
}

/// Whether a node wants the channel this slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Demand {
    Idle,
    Ready,
    /// Traffic exists but every eligible link has an active PU.
    Blocked,
    /// Waiting for a coding partner until the given time.
    HoldUntil(SimTime),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeferReason {
    PrimaryUser,
    Hold { until: SimTime },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SendDecision {
    Transmit(Box<Frame>),
    Defer(DeferReason),
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReceiveOutcome {
    /// The frame reached this node's MAC and it was the unicast destination.
    pub link_frame_received: bool,
    /// This node was the unicast destination and now holds its member.
    pub link_packet_obtained: bool,
    pub decodable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeoutOutcome {
    /// Tag cleared; the packet may be coded again.
    Requeued {
        retries: u32,
    },
    Dropped,
    /// Timer no longer matches a pending acknowledgement.
    Stale,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct LinkEstimator {
    attempts: f64,
    failures: f64,
}

impl LinkEstimator {
    const DECAY: f64 = 0.95;

    fn record(&mut self, received: bool) {
        self.attempts = self.attempts * Self::DECAY + 1.0;
        self.failures = self.failures * Self::DECAY + if received { 0.0 } else { 1.0 };
    }

    fn loss(&self) -> Option<f64> {
        (self.attempts > 0.0).then(|| self.failures / self.attempts)
    }
}

/// One secondary user.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub position: Position,
    pub queue: OutputQueue,
    pub pool: PacketPool,
    pub beliefs: BeliefTable,
    pub pending_acks: BTreeMap<PacketId, PendingAck>,
    /// Final destination to next hop.
    pub routes: BTreeMap<NodeId, NodeId>,
    /// Channel used on the link to each neighbour.
    pub link_channels: BTreeMap<NodeId, ChannelId>,
    pub report_channel: ChannelId,
    neighbours: BTreeMap<NodeId, Position>,
    retries: BTreeMap<PacketId, u32>,
    own_pus: Vec<PuObservation>,
    peer_pus: BTreeMap<NodeId, Vec<(u16, f64)>>,
    peer_links: BTreeMap<NodeId, BTreeMap<NodeId, f64>>,
    link_stats: BTreeMap<NodeId, LinkEstimator>,
    acks_out: BTreeSet<PacketId>,
    recent_pool: VecDeque<PacketId>,
    handled: BTreeMap<PacketId, SimTime>,
    pending_report: Option<ReceptionReport>,
    generation: u64,
}

impl NodeState {
    pub fn new(id: NodeId, position: Position, params: &ProtocolParams) -> NodeState {
        NodeState {
            id,
            position,
            queue: OutputQueue::new(params.queue_capacity),
            pool: PacketPool::new(params.pool_ttl, params.pool_capacity),
            beliefs: BeliefTable::new(),
            pending_acks: BTreeMap::new(),
            routes: BTreeMap::new(),
            link_channels: BTreeMap::new(),
            report_channel: ChannelId(0),
            neighbours: BTreeMap::new(),
            retries: BTreeMap::new(),
            own_pus: Vec::new(),
            peer_pus: BTreeMap::new(),
            peer_links: BTreeMap::new(),
            link_stats: BTreeMap::new(),
            acks_out: BTreeSet::new(),
            recent_pool: VecDeque::new(),
            handled: BTreeMap::new(),
            pending_report: None,
            generation: 0,
        }
    }

    pub fn neighbours(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.neighbours.keys().copied()
    }

    /// Call before `set_pu_roster`.
    pub fn set_neighbours(&mut self, neighbours: impl IntoIterator<Item = (NodeId, Position)>) {
        self.neighbours = neighbours.into_iter().collect();
        for &n in self.neighbours.keys() {
            self.beliefs.entry(n).or_default();
        }
        self.beliefs.retain(|n, _| self.neighbours.contains_key(n));
    }

    /// Records which PUs this node hears and picks its report channel: the
    /// channel with the least PU activity at this position.
    pub fn set_pu_roster(&mut self, pus: &[PuProcess], channel_count: u8) {
        self.own_pus = pus
            .iter()
            .filter(|p| p.covers(&self.position))
            .map(|p| PuObservation {
                index: p.index,
                channel: p.channel,
                lambda: p.lambda,
            })
            .collect();
        let load = |c: u8| -> f64 {
            self.own_pus
                .iter()
                .filter(|p| p.channel == ChannelId(c))
                .map(|p| p.lambda)
                .sum()
        };
        self.report_channel = ChannelId(
            (0..channel_count.max(1))
                .min_by(|a, b| load(*a).total_cmp(&load(*b)).then(a.cmp(b)))
                .unwrap_or(0),
        );
        self.refresh_link_pus(pus);
    }

    /// Link PUs towards each neighbour: those heard here plus those the
    /// neighbour reports. Channels come from the shared roster.
    fn refresh_link_pus(&mut self, pus: &[PuProcess]) {
        for (n, belief) in self.beliefs.iter_mut() {
            let mut all = self.own_pus.clone();
            for &(index, lambda) in self.peer_pus.get(n).map(Vec::as_slice).unwrap_or(&[]) {
                if all.iter().any(|p| p.index == index) {
                    continue;
                }
                if let Some(pu) = pus.iter().find(|p| p.index == index) {
                    all.push(PuObservation {
                        index,
                        channel: pu.channel,
                        lambda,
                    });
                }
            }
            belief.link_pus = all;
        }
    }

    /// Current loss estimate towards `n`.
    pub fn p_link(&self, n: NodeId) -> f64 {
        self.link_stats
            .get(&n)
            .and_then(LinkEstimator::loss)
            .or_else(|| self.peer_links.get(&n).and_then(|m| m.get(&self.id)).copied())
            .unwrap_or(0.0)
    }

    fn sync_p_link(&mut self, n: NodeId) {
        let p = self.p_link(n);
        if let Some(b) = self.beliefs.get_mut(&n) {
            b.p_link = p;
        }
    }

    /// Holds `id`, either queued or pooled.
    pub fn has(&self, id: PacketId) -> bool {
        self.pool.contains(id) || self.queue.contains(id)
    }

    fn payload_of(&self, id: PacketId) -> Option<&Vec<u8>> {
        self.pool
            .get(id)
            .and_then(|e| e.packet.payload.as_ref())
            .or_else(|| self.queue.get(id).and_then(|q| q.packet.payload.as_ref()))
    }

    fn remember(&mut self, packet: NativePacket, now: SimTime) {
        let id = packet.id;
        self.pool.insert(packet, now);
        self.recent_pool.retain(|p| *p != id);
        self.recent_pool.push_back(id);
        while self.recent_pool.len() > 64 {
            self.recent_pool.pop_front();
        }
    }

    fn enqueue(&mut self, packet: NativePacket, now: SimTime, forwarded: bool, fx: &mut Effects) {
        let entry = QueuedPacket {
            packet,
            enqueued_at: now,
            forwarded,
        };
        match self.queue.push(entry) {
            Ok(()) => fx
                .enqueued
                .push(self.queue.iter().last().expect("just pushed").packet.clone()),
            Err(rejected) => fx.overflowed.push(rejected.packet),
        }
    }

    /// Accepts a packet from the local application.
    pub fn originate(&mut self, packet: NativePacket, now: SimTime, fx: &mut Effects) {
        self.enqueue(packet, now, false, fx);
    }

    fn sender_blocked(&self, channel: ChannelId, pus: &[PuProcess]) -> bool {
        pus.iter()
            .any(|p| p.channel == channel && p.is_on() && p.covers(&self.position))
    }

    fn link_blocked(&self, neighbour: NodeId, channel: ChannelId, pus: &[PuProcess]) -> bool {
        let Some(pos) = self.neighbours.get(&neighbour) else {
            return true;
        };
        pus.iter()
            .any(|p| p.channel == channel && p.is_on() && (p.covers(pos) || p.covers(&self.position)))
    }

    /// Untagged queued packets routed over `channel`, in FIFO order, split
    /// into sendable ones and those whose link has an active PU.
    fn eligible(&self, channel: ChannelId, pus: &[PuProcess]) -> (Vec<&QueuedPacket>, usize) {
        let mut ok = Vec::new();
        let mut blocked = 0;
        for q in self.queue.untagged() {
            if self.link_channels.get(&q.packet.next_hop) != Some(&channel) {
                continue;
            }
            if self.link_blocked(q.packet.next_hop, channel, pus) {
                blocked += 1;
            } else {
                ok.push(q);
            }
        }
        (ok, blocked)
    }

    fn coding_context<'a>(&'a self, channel: ChannelId, params: &ProtocolParams) -> CodingContext<'a> {
        CodingContext {
            beliefs: &self.beliefs,
            channel,
            tau: params.tau_seconds(),
            pu_aware: params.mode == Mode::Punch,
        }
    }

    fn plan(&self, candidates: &[&QueuedPacket], channel: ChannelId, params: &ProtocolParams) -> EncodingPlan {
        let natives: Vec<&NativePacket> = candidates.iter().map(|q| &q.packet).collect();
        let ctx = self.coding_context(channel, params);
        if params.mode.codes() {
            select_encoding(&natives, &ctx, params.theta, params.window).expect("candidates non-empty")
        } else {
            plan_for(&natives, &[0], &ctx)
        }
    }

    /// Release time if every candidate is a freshly forwarded packet with
    /// no coding partner yet.
    fn hold_until(
        &self,
        candidates: &[&QueuedPacket],
        plan: Option<&EncodingPlan>,
        channel: ChannelId,
        now: SimTime,
        params: &ProtocolParams,
    ) -> Option<SimTime> {
        if !params.mode.codes() || params.coding_hold <= 0.0 {
            return None;
        }
        let young = |q: &&QueuedPacket| q.forwarded && now < q.enqueued_at + params.coding_hold;
        if !candidates.iter().all(young) {
            return None;
        }
        let native = match plan {
            Some(p) => p.is_native(),
            None => self.plan(candidates, channel, params).is_native(),
        };
        native.then(|| {
            candidates
                .iter()
                .map(|q| q.enqueued_at + params.coding_hold)
                .fold(f64::INFINITY, f64::min)
        })
    }

    /// Cheap check used by the MAC to decide who contends this slot.
    pub fn demand(&self, channel: ChannelId, now: SimTime, env: &NodeEnv<'_>) -> Demand {
        let blocked_here = self.sender_blocked(channel, env.pus);
        if !blocked_here && self.pending_report.is_some() && self.report_channel == channel {
            return Demand::Ready;
        }
        let (candidates, blocked) = self.eligible(channel, env.pus);
        if blocked_here {
            return if candidates.is_empty() && blocked == 0 {
                Demand::Idle
            } else {
                Demand::Blocked
            };
        }
        if candidates.is_empty() {
            return if blocked > 0 { Demand::Blocked } else { Demand::Idle };
        }
        match self.hold_until(&candidates, None, channel, now, env.params) {
            Some(t) => Demand::HoldUntil(t),
            None => Demand::Ready,
        }
    }

    /// The MAC granted `channel`: send a pending report, or pick and encode
    /// packets from the queue.
    pub fn on_send_opportunity(
        &mut self,
        channel: ChannelId,
        now: SimTime,
        env: &NodeEnv<'_>,
        fx: &mut Effects,
    ) -> SendDecision {
        let params = env.params;
        if self.sender_blocked(channel, env.pus) {
            return SendDecision::Defer(DeferReason::PrimaryUser);
        }
        if self.report_channel == channel {
            if let Some(report) = self.pending_report.take() {
                return SendDecision::Transmit(Box::new(self.report_frame(report, channel, now, params)));
            }
        }
        let (candidates, blocked) = self.eligible(channel, env.pus);
        if candidates.is_empty() {
            return if blocked > 0 {
                SendDecision::Defer(DeferReason::PrimaryUser)
            } else {
                SendDecision::Idle
            };
        }
        let plan = self.plan(&candidates, channel, params);
        if let Some(until) = self.hold_until(&candidates, Some(&plan), channel, now, params) {
            if env.tracing {
                fx.trace.push(("hold", json!({ "channel": channel.0, "until": until })));
            }
            return SendDecision::Defer(DeferReason::Hold { until });
        }
        let members: Vec<NativePacket> = plan
            .members
            .iter()
            .map(|m| candidates[m.queue_index].packet.clone())
            .collect();
        let frame = self.data_frame(members, channel, now, params);
        self.commit_send(&frame, &plan, now, env, fx);
        SendDecision::Transmit(Box::new(frame))
    }

    fn header_base(&self) -> PunchHeader {
        PunchHeader {
            pu_block: self
                .own_pus
                .iter()
                .map(|p| (p.index, lambda_to_q8_8(p.lambda)))
                .collect(),
            link_block: self
                .neighbours
                .keys()
                .map(|n| (n.0, p_link_to_u16(self.p_link(*n))))
                .collect(),
            ..Default::default()
        }
    }

    fn data_frame(
        &self,
        members: Vec<NativePacket>,
        channel: ChannelId,
        now: SimTime,
        params: &ProtocolParams,
    ) -> Frame {
        let mut header = self.header_base();
        header.xored = members.iter().map(|m| (m.id.0, m.next_hop.0)).collect();
        header.ack_ids = self.acks_out.iter().take(MAX_BLOCK_LEN).map(|p| p.0).collect();
        header.report_ids = self
            .recent_pool
            .iter()
            .rev()
            .filter(|id| self.pool.contains(**id))
            .take(params.piggyback_report_ids)
            .map(|p| p.0)
            .collect();
        let payload = if members.iter().all(|m| m.payload.is_some()) {
            let parts: Vec<&Vec<u8>> = members.iter().filter_map(|m| m.payload.as_ref()).collect();
            xor_combine(&parts).ok()
        } else {
            None
        };
        let body = members.iter().map(|m| m.size_bytes).max().unwrap_or(0);
        let size = body + header.encoded_len() as u32;
        Frame {
            sender: self.id,
            channel,
            kind: FrameKind::Data {
                link_dest: members[0].next_hop,
            },
            header,
            natives: members,
            payload,
            size_bytes: size,
            airtime: params.frame_time(size, true),
            sent_at: now,
        }
    }

    fn report_frame(
        &self,
        report: ReceptionReport,
        channel: ChannelId,
        now: SimTime,
        params: &ProtocolParams,
    ) -> Frame {
        let header = PunchHeader {
            report_ids: report.pool_ids.iter().take(MAX_BLOCK_LEN).map(|p| p.0).collect(),
            ack_ids: report.acked_ids.iter().take(MAX_BLOCK_LEN).map(|p| p.0).collect(),
            pu_block: report
                .pu_entries
                .iter()
                .map(|(i, l)| (*i, lambda_to_q8_8(*l)))
                .collect(),
            link_block: report
                .link_entries
                .iter()
                .map(|(n, p)| (n.0, p_link_to_u16(*p)))
                .collect(),
            ..Default::default()
        };
        let size = header.encoded_len() as u32;
        Frame {
            sender: self.id,
            channel,
            kind: FrameKind::Report,
            header,
            natives: Vec::new(),
            payload: None,
            size_bytes: size,
            airtime: params.frame_time(size, false),
            sent_at: now,
        }
    }

    fn commit_send(&mut self, frame: &Frame, plan: &EncodingPlan, now: SimTime, env: &NodeEnv<'_>, fx: &mut Effects) {
        let params = env.params;
        for (k, m) in frame.natives.iter().enumerate() {
            self.queue.tag(m.id);
            self.generation += 1;
            let link_layer = k == 0;
            let deadline = if link_layer {
                frame.ends_at()
            } else {
                frame.ends_at() + params.ack_timeout
            };
            self.pending_acks.insert(
                m.id,
                PendingAck {
                    deadline,
                    generation: self.generation,
                    link_layer,
                },
            );
            if !link_layer {
                fx.timers.push(AckTimer {
                    pid: m.id,
                    deadline,
                    generation: self.generation,
                });
            }
            if self.retries.get(&m.id).copied().unwrap_or(0) > 0 {
                fx.retransmissions += 1;
            }
            self.remember(m.clone(), now);
        }
        // guess which neighbours will end up holding each member
        let coded = frame.natives.len() > 1;
        let tau = frame.airtime;
        let guesses: Vec<(NodeId, PacketId, f64)> = frame
            .natives
            .iter()
            .flat_map(|m| {
                self.neighbours
                    .keys()
                    .filter(move |n| !coded || **n == m.next_hop)
                    .map(move |n| (*n, m.id))
            })
            .map(|(n, id)| {
                let lambdas = self
                    .beliefs
                    .get(&n)
                    .map(|b| b.lambdas_on(frame.channel))
                    .unwrap_or_default();
                let pa = p_active(&lambdas, tau).unwrap_or(0.0);
                (n, id, edge_weight(pa, 1.0, self.p_link(n)))
            })
            .collect();
        for (n, id, conf) in guesses {
            if let Some(b) = self.beliefs.get_mut(&n) {
                b.observe(id, conf, now);
            }
        }
        if env.tracing {
            fx.trace.push((
                "send",
                json!({
                    "channel": frame.channel.0,
                    "members": frame.header.xored,
                    "bytes": frame.size_bytes,
                    "predicted_delivery": plan.predicted_delivery,
                }),
            ));
        }
    }

    /// A frame from a neighbour survived the channel.
    pub fn on_receive(&mut self, frame: &Frame, now: SimTime, env: &NodeEnv<'_>, fx: &mut Effects) -> ReceiveOutcome {
        let sender = frame.sender;
        self.ingest_header(sender, frame, now, env, fx);
        let FrameKind::Data { link_dest } = frame.kind else {
            return ReceiveOutcome {
                decodable: true,
                ..Default::default()
            };
        };
        let for_link = link_dest == self.id;
        let mut outcome = ReceiveOutcome {
            link_frame_received: for_link,
            ..Default::default()
        };

        let unknown: Vec<usize> = frame
            .natives
            .iter()
            .enumerate()
            .filter(|(_, m)| !self.has(m.id))
            .map(|(k, _)| k)
            .collect();
        if unknown.len() > 1 {
            fx.undecodable += 1;
            if env.tracing {
                fx.trace.push((
                    "undecodable",
                    json!({ "from": sender.0, "members": frame.header.xored }),
                ));
            }
            return outcome;
        }
        outcome.decodable = true;
        if let Some(&k) = unknown.first() {
            if frame.natives.len() > 1 {
                fx.recovered += 1;
                if let Some(coded) = &frame.payload {
                    let mut parts = vec![coded.clone()];
                    for (j, m) in frame.natives.iter().enumerate() {
                        if j != k {
                            parts.push(self.payload_of(m.id).cloned().unwrap_or_default());
                        }
                    }
                    let mut recovered = xor_combine(&parts).expect("non-empty");
                    let original = frame.natives[k].payload.as_deref().unwrap_or_default();
                    recovered.truncate(original.len());
                    if recovered != original {
                        fx.decode_mismatches += 1;
                    }
                }
            }
        }

        for m in &frame.natives {
            self.remember(m.clone(), now);
            if m.next_hop != self.id {
                continue;
            }
            self.accept_for_me(m, now, fx);
            // duplicates are acked again: the earlier ack may have been lost
            if for_link {
                outcome.link_packet_obtained = true;
            } else {
                self.acks_out.insert(m.id);
            }
        }
        self.infer_overhearing(frame, now, env.pus);
        outcome
    }

    fn accept_for_me(&mut self, m: &NativePacket, now: SimTime, fx: &mut Effects) {
        if self.handled.contains_key(&m.id) || self.queue.contains(m.id) {
            fx.duplicates += 1;
            return;
        }
        self.handled.insert(m.id, now);
        if m.final_dest == self.id {
            fx.delivered.push(m.clone());
            return;
        }
        match self.routes.get(&m.final_dest) {
            Some(&next) => self.enqueue(m.with_next_hop(next), now, true, fx),
            None => {
                log::warn!("{} has no route to {}", self.id, m.final_dest);
                fx.overflowed.push(m.clone());
            }
        }
    }

    /// Neighbours of the sender probably overheard what it sent.
    fn infer_overhearing(&mut self, frame: &Frame, now: SimTime, pus: &[PuProcess]) {
        let Some(sender_links) = self.peer_links.get(&frame.sender) else {
            return;
        };
        let coded = frame.natives.len() > 1;
        let sender_pus = self.peer_pus.get(&frame.sender).cloned().unwrap_or_default();
        let mut guesses = Vec::new();
        for m in &frame.natives {
            for (&n, &loss) in sender_links {
                if n == self.id || !self.neighbours.contains_key(&n) || (coded && n != m.next_hop) {
                    continue;
                }
                let mut lambdas: Vec<f64> = Vec::new();
                let mut seen = BTreeSet::new();
                let remote = self.peer_pus.get(&n).map(Vec::as_slice).unwrap_or(&[]);
                for &(index, lambda) in sender_pus.iter().chain(remote) {
                    if seen.insert(index) && pus.iter().any(|p| p.index == index && p.channel == frame.channel) {
                        lambdas.push(lambda);
                    }
                }
                let pa = p_active(&lambdas, frame.airtime).unwrap_or(0.0);
                guesses.push((n, m.id, edge_weight(pa, 1.0, loss)));
            }
        }
        for (n, id, conf) in guesses {
            if let Some(b) = self.beliefs.get_mut(&n) {
                b.observe(id, conf, now);
            }
        }
    }

    fn ingest_header(&mut self, sender: NodeId, frame: &Frame, now: SimTime, env: &NodeEnv<'_>, fx: &mut Effects) {
        let header = &frame.header;
        if let Some(b) = self.beliefs.get_mut(&sender) {
            for &(id, _) in &header.xored {
                b.observe(PacketId(id), 1.0, now);
            }
            match frame.kind {
                FrameKind::Report => {
                    let ids: BTreeSet<PacketId> = header.report_ids.iter().map(|i| PacketId(*i)).collect();
                    b.apply_full_report(&ids, frame.sent_at);
                }
                FrameKind::Data { .. } => {
                    for &id in &header.report_ids {
                        b.observe(PacketId(id), 1.0, now);
                    }
                }
            }
        }
        for &id in &header.ack_ids {
            let pid = PacketId(id);
            let from_next_hop = self.queue.get(pid).is_some_and(|q| q.packet.next_hop == sender);
            if from_next_hop {
                self.pending_acks.remove(&pid);
                self.retries.remove(&pid);
                if let Some(q) = self.queue.remove(pid) {
                    fx.acked.push(q.packet);
                }
            }
        }
        let pus: Vec<(u16, f64)> = header.pu_block.iter().map(|(i, l)| (*i, q8_8_to_lambda(*l))).collect();
        if self.peer_pus.get(&sender) != Some(&pus) {
            self.peer_pus.insert(sender, pus);
            self.refresh_link_pus(env.pus);
        }
        let links: BTreeMap<NodeId, f64> = header
            .link_block
            .iter()
            .map(|(n, p)| (NodeId(*n), u16_to_p_link(*p)))
            .collect();
        self.peer_links.insert(sender, links);
        self.sync_p_link(sender);
    }

    /// Result of the link-layer exchange for the unicast member of a frame
    /// this node sent.
    #[allow(clippy::too_many_arguments)]
    pub fn on_link_result(
        &mut self,
        pid: PacketId,
        frame_received: bool,
        packet_obtained: bool,
        link_dest: NodeId,
        now: SimTime,
        env: &NodeEnv<'_>,
        fx: &mut Effects,
    ) {
        self.link_stats.entry(link_dest).or_default().record(frame_received);
        self.sync_p_link(link_dest);
        match self.pending_acks.get(&pid) {
            Some(p) if p.link_layer => {}
            _ => return,
        }
        if packet_obtained {
            self.pending_acks.remove(&pid);
            self.retries.remove(&pid);
            if let Some(q) = self.queue.remove(pid) {
                fx.acked.push(q.packet);
            }
        } else {
            let generation = self.pending_acks[&pid].generation;
            self.on_ack_timeout(pid, generation, now, env, fx);
        }
    }

    /// The acknowledgement deadline for `pid` passed.
    pub fn on_ack_timeout(
        &mut self,
        pid: PacketId,
        generation: u64,
        _now: SimTime,
        env: &NodeEnv<'_>,
        fx: &mut Effects,
    ) -> TimeoutOutcome {
        match self.pending_acks.get(&pid) {
            Some(p) if p.generation == generation => {}
            _ => return TimeoutOutcome::Stale,
        }
        self.pending_acks.remove(&pid);
        let retries = self.retries.entry(pid).or_insert(0);
        *retries += 1;
        let retries = *retries;
        if retries > env.params.max_retries {
            self.retries.remove(&pid);
            if let Some(q) = self.queue.remove(pid) {
                if env.tracing {
                    fx.trace.push(("drop_retry", json!({ "packet": pid.0 })));
                }
                fx.dropped_retry.push(q.packet);
            }
            TimeoutOutcome::Dropped
        } else {
            self.queue.untag(pid);
            TimeoutOutcome::Requeued { retries }
        }
    }

    pub fn retries(&self, pid: PacketId) -> u32 {
        self.retries.get(&pid).copied().unwrap_or(0)
    }

    /// Drops stale pool entries, beliefs and duplicate-suppression state.
    pub fn housekeeping(&mut self, now: SimTime, params: &ProtocolParams) {
        self.pool.prune(now);
        for b in self.beliefs.values_mut() {
            b.expire(now, params.pool_ttl);
        }
        self.handled.retain(|_, t| now - *t <= params.dedup_horizon);
    }

    /// Snapshot of the pool, acks since the last report, heard PUs and
    /// measured link losses. The report waits for a MAC grant on the
    /// report channel; an unsent previous report is merged into it.
    pub fn emit_reception_report(&mut self, now: SimTime, params: &ProtocolParams) -> ReceptionReport {
        self.housekeeping(now, params);
        let mut acked = std::mem::take(&mut self.acks_out);
        if let Some(old) = self.pending_report.take() {
            acked.extend(old.acked_ids);
        }
        let report = ReceptionReport {
            origin: self.id,
            pool_ids: self.pool.ids().collect(),
            acked_ids: acked,
            pu_entries: self.own_pus.iter().map(|p| (p.index, p.lambda)).collect(),
            link_entries: self.neighbours.keys().map(|n| (*n, self.p_link(*n))).collect(),
            issued_at: now,
        };
        self.pending_report = Some(report.clone());
        report
    }

    pub fn has_pending_report(&self) -> bool {
        self.pending_report.is_some()
    }

    pub fn belief(&self, n: NodeId) -> Option<&NeighbourBelief> {
        self.beliefs.get(&n)
    }
}

#[cfg(test)]
mod tests;
