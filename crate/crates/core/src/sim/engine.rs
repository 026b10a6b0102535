//! The event loop.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use ordered_float::OrderedFloat;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::mac::{frame_outcome, mac_grant_policy, ReceiverLink};
use super::metrics::{MetricsLedger, Sample};
use super::rng::{stream, Stream};
use super::scenario::{Scenario, ScenarioError};
use super::topology::{adjacency, link_channel, shortest_path_routes};
use crate::node::{DeferReason, Demand, Effects, Frame, FrameKind, NodeEnv, NodeState, SendDecision};
use crate::pu::PuProcess;
use crate::types::{ChannelId, NativePacket, NodeId, PacketId, SimTime, PACKET_SEQ_MODULUS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    PacketArrival {
        flow: usize,
    },
    MacGrant {
        channel: u8,
    },
    FrameEnd {
        channel: u8,
    },
    PuToggle {
        pu: usize,
    },
    ReportTimer {
        node: usize,
    },
    AckTimeout {
        node: usize,
        pid: PacketId,
        generation: u64,
    },
    Sample,
    RouteRefresh,
    Kick {
        channel: u8,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DropReason {
    Retry,
    Overflow,
}

/// Lifecycle of one generated packet across every queue in the network.
#[derive(Debug, Clone)]
struct PacketRecord {
    copies: u32,
    delivered: bool,
    cohort: bool,
    reason: Option<DropReason>,
    finished_at: Option<SimTime>,
}

#[derive(Debug, Default)]
struct ChannelState {
    on_air: Option<Frame>,
    grant_pending: bool,
    kick_at: Option<SimTime>,
}

/// Output of one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub ledger: MetricsLedger,
    /// JSON lines, empty unless tracing is on.
    pub trace: Vec<String>,
}

pub fn run(scenario: &Scenario) -> Result<RunOutput, ScenarioError> {
    Ok(Simulation::new(scenario)?.run())
}

pub struct Simulation<'a> {
    sc: &'a Scenario,
    now: SimTime,
    warmup: SimTime,
    events: BinaryHeap<Reverse<(OrderedFloat<f64>, u64, EventKind)>>,
    seq: u64,
    nodes: Vec<NodeState>,
    index: BTreeMap<NodeId, usize>,
    neighbours: Vec<Vec<usize>>,
    loss: Vec<Vec<f64>>,
    pus: Vec<PuProcess>,
    pu_rngs: Vec<ChaCha8Rng>,
    traffic_rng: ChaCha8Rng,
    link_rng: ChaCha8Rng,
    mac_rng: ChaCha8Rng,
    report_rng: ChaCha8Rng,
    payload_rng: ChaCha8Rng,
    channels: Vec<ChannelState>,
    next_seq: BTreeMap<NodeId, u32>,
    id_owner: BTreeMap<PacketId, usize>,
    packets: Vec<PacketRecord>,
    ledger: MetricsLedger,
    queued_total: usize,
    queue_clock: SimTime,
    trace: Vec<String>,
}

impl<'a> Simulation<'a> {
    pub fn new(sc: &'a Scenario) -> Result<Simulation<'a>, ScenarioError> {
        sc.validate()?;
        let adj = adjacency(&sc.nodes, sc.radio_range);
        let routes = shortest_path_routes(&adj);
        let mut bad = Vec::new();
        for (k, f) in sc.flows.iter().enumerate() {
            if !routes[&f.src].contains_key(&f.dst) {
                bad.push(format!("flow {k}: {} cannot reach {}", f.src, f.dst));
            }
        }
        if !bad.is_empty() {
            return Err(ScenarioError { violations: bad });
        }

        let pus = sc
            .pus
            .iter()
            .map(|p| {
                PuProcess::new(p.index, p.channel, p.position, p.radius, p.lambda, p.mu())
                    .map_err(|e| ScenarioError::single(format!("PU {}: {e}", p.index)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let index: BTreeMap<NodeId, usize> = sc.nodes.iter().enumerate().map(|(k, n)| (n.id, k)).collect();
        let neighbours: Vec<Vec<usize>> = sc
            .nodes
            .iter()
            .map(|n| adj[&n.id].iter().map(|m| index[m]).collect())
            .collect();
        let loss = sc
            .nodes
            .iter()
            .map(|a| {
                sc.nodes
                    .iter()
                    .map(|b| {
                        sc.link_loss
                            .probability(a.position.distance(&b.position), sc.radio_range)
                    })
                    .collect()
            })
            .collect();
        let mut nodes: Vec<NodeState> = sc
            .nodes
            .iter()
            .map(|n| NodeState::new(n.id, n.position, &sc.protocol))
            .collect();
        for (k, node) in nodes.iter_mut().enumerate() {
            node.set_neighbours(neighbours[k].iter().map(|&m| (sc.nodes[m].id, sc.nodes[m].position)));
            node.set_pu_roster(&pus, sc.channels);
            node.routes = routes[&sc.nodes[k].id].clone();
        }
        let mut sim = Simulation {
            sc,
            now: 0.0,
            warmup: sc.warmup(),
            events: BinaryHeap::new(),
            seq: 0,
            nodes,
            index,
            neighbours,
            loss,
            pu_rngs: sc.pus.iter().map(|p| stream(sc.seed, Stream::Pu(p.index))).collect(),
            pus,
            traffic_rng: stream(sc.seed, Stream::Traffic),
            link_rng: stream(sc.seed, Stream::Link),
            mac_rng: stream(sc.seed, Stream::Mac),
            report_rng: stream(sc.seed, Stream::Report),
            payload_rng: stream(sc.seed, Stream::Payload),
            channels: (0..sc.channels).map(|_| ChannelState::default()).collect(),
            next_seq: BTreeMap::new(),
            id_owner: BTreeMap::new(),
            packets: Vec::new(),
            ledger: MetricsLedger {
                mode: Some(sc.protocol.mode),
                seed: sc.seed,
                nodes: sc.nodes.len(),
                measured_time: sc.duration - sc.warmup(),
                ..Default::default()
            },
            queued_total: 0,
            queue_clock: 0.0,
            trace: Vec::new(),
        };
        sim.assign_channels();
        sim.bootstrap();
        Ok(sim)
    }

    fn assign_channels(&mut self) -> usize {
        let mut changed = 0;
        for k in 0..self.nodes.len() {
            let a = self.sc.nodes[k].position;
            for &m in &self.neighbours[k] {
                let c = link_channel(&a, &self.sc.nodes[m].position, self.sc.channels, &self.sc.pus);
                if self.nodes[k].link_channels.insert(self.sc.nodes[m].id, c) != Some(c) {
                    changed += 1;
                }
            }
        }
        changed
    }

    fn bootstrap(&mut self) {
        for k in 0..self.pus.len() {
            self.pus[k].start_stationary(0.0, &mut self.pu_rngs[k]);
            let at = self.pus[k].next_toggle_at;
            self.schedule(at, EventKind::PuToggle { pu: k });
        }
        for (k, f) in self.sc.flows.iter().enumerate() {
            let start = f.start.unwrap_or_else(|| self.traffic_rng.gen::<f64>() * f.interval());
            self.schedule(start, EventKind::PacketArrival { flow: k });
        }
        let period = self.sc.timers.report_period;
        for k in 0..self.nodes.len() {
            let at = self.report_rng.gen::<f64>() * period;
            self.schedule(at, EventKind::ReportTimer { node: k });
        }
        self.schedule(self.sc.timers.sample_interval, EventKind::Sample);
        self.schedule(self.sc.timers.route_refresh, EventKind::RouteRefresh);
    }

    fn schedule(&mut self, at: SimTime, kind: EventKind) {
        debug_assert!(at >= self.now, "event scheduled in the past");
        self.seq += 1;
        self.events.push(Reverse((OrderedFloat(at), self.seq, kind)));
    }

    fn env(&self) -> NodeEnv<'_> {
        NodeEnv {
            pus: &self.pus,
            params: &self.sc.protocol,
            tracing: self.sc.trace,
        }
    }

    fn measuring(&self) -> bool {
        self.now >= self.warmup
    }

    fn emit(&mut self, node: Option<NodeId>, event: &str, detail: serde_json::Value) {
        if self.sc.trace {
            let line = json!({
                "t": self.now,
                "node": node.map(|n| n.0),
                "event": event,
                "detail": detail,
            });
            self.trace.push(line.to_string());
        }
    }

    pub fn run(mut self) -> RunOutput {
        while let Some(Reverse((OrderedFloat(at), _, kind))) = self.events.pop() {
            if at > self.sc.duration {
                break;
            }
            self.now = at;
            self.dispatch(kind);
        }
        self.now = self.sc.duration;
        self.finish()
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::PacketArrival { flow } => self.on_arrival(flow),
            EventKind::MacGrant { channel } => self.on_grant(channel),
            EventKind::FrameEnd { channel } => self.on_frame_end(channel),
            EventKind::PuToggle { pu } => {
                self.pus[pu].toggle(&mut self.pu_rngs[pu]);
                let at = self.pus[pu].next_toggle_at;
                self.schedule(at, EventKind::PuToggle { pu });
                let detail = json!({ "pu": self.pus[pu].index, "on": self.pus[pu].is_on() });
                self.emit(None, "pu_toggle", detail);
                self.kick_all();
            }
            EventKind::ReportTimer { node } => {
                let report = self.nodes[node].emit_reception_report(self.now, &self.sc.protocol);
                let t = &self.sc.timers;
                let jitter = 1.0 + t.report_jitter * (2.0 * self.report_rng.gen::<f64>() - 1.0);
                let at = self.now + t.report_period * jitter;
                self.schedule(at, EventKind::ReportTimer { node });
                let detail = json!({ "pool": report.pool_ids.len(), "acks": report.acked_ids.len() });
                self.emit(Some(self.nodes[node].id), "report_due", detail);
                let c = self.nodes[node].report_channel.0;
                self.kick(c);
            }
            EventKind::AckTimeout { node, pid, generation } => {
                let mut fx = Effects::default();
                let now = self.now;
                let env = NodeEnv {
                    pus: &self.pus,
                    params: &self.sc.protocol,
                    tracing: self.sc.trace,
                };
                self.nodes[node].on_ack_timeout(pid, generation, now, &env, &mut fx);
                self.apply(node, fx);
                self.kick_all();
            }
            EventKind::Sample => {
                self.sample();
                let at = self.now + self.sc.timers.sample_interval;
                self.schedule(at, EventKind::Sample);
            }
            EventKind::RouteRefresh => {
                let changed = self.assign_channels();
                if changed > 0 {
                    self.emit(None, "channels_changed", json!({ "links": changed }));
                    self.kick_all();
                }
                let at = self.now + self.sc.timers.route_refresh;
                self.schedule(at, EventKind::RouteRefresh);
            }
            EventKind::Kick { channel } => {
                let ch = &mut self.channels[channel as usize];
                if ch.kick_at == Some(self.now) {
                    ch.kick_at = None;
                }
                self.kick(channel);
            }
        }
    }

    fn on_arrival(&mut self, flow: usize) {
        let f = self.sc.flows[flow];
        let next = self.now + f.interval();
        if next <= self.sc.duration {
            self.schedule(next, EventKind::PacketArrival { flow });
        }
        let src = self.index[&f.src];
        let Some(id) = self.assign_id(f.src) else {
            log::warn!("{} has no free packet id, dropping", f.src);
            return;
        };
        let uid = self.packets.len();
        let cohort = self.measuring();
        self.packets.push(PacketRecord {
            copies: 0,
            delivered: false,
            cohort,
            reason: None,
            finished_at: None,
        });
        self.id_owner.insert(id, uid);
        if cohort {
            self.ledger.generated += 1;
        }
        let payload = self.sc.carry_payloads.then(|| {
            let mut bytes = vec![0u8; f.packet_bytes as usize];
            self.payload_rng.fill(&mut bytes[..]);
            bytes
        });
        let packet = NativePacket {
            id,
            source: f.src,
            final_dest: f.dst,
            next_hop: self.nodes[src].routes[&f.dst],
            size_bytes: f.packet_bytes,
            created_at: self.now,
            uid: uid as u64,
            payload,
        };
        self.emit(Some(f.src), "generate", json!({ "packet": id.0, "dst": f.dst.0 }));
        let mut fx = Effects::default();
        self.nodes[src].originate(packet, self.now, &mut fx);
        self.apply(src, fx);
        self.kick_all();
    }

    /// Next free id for `source`, skipping ids still alive somewhere or
    /// finished within the duplicate-suppression horizon.
    fn assign_id(&mut self, source: NodeId) -> Option<PacketId> {
        let horizon = self.sc.protocol.dedup_horizon;
        for _ in 0..PACKET_SEQ_MODULUS {
            let seq = self.next_seq.entry(source).or_insert(0);
            let id = PacketId::compose(source, *seq);
            *seq = seq.wrapping_add(1);
            let busy = self.id_owner.get(&id).is_some_and(|&uid| {
                let p = &self.packets[uid];
                p.copies > 0 || p.finished_at.is_none_or(|t| self.now - t < horizon)
            });
            if !busy {
                return Some(id);
            }
            self.ledger.id_collisions += 1;
        }
        None
    }

    fn kick_all(&mut self) {
        for c in 0..self.sc.channels {
            self.kick(c);
        }
    }

    /// Starts contention on an idle channel, or arranges to look again when
    /// the earliest hold expires.
    fn kick(&mut self, channel: u8) {
        let ch = &self.channels[channel as usize];
        if ch.on_air.is_some() || ch.grant_pending {
            return;
        }
        let c = ChannelId(channel);
        let env = self.env();
        let mut ready = false;
        let mut hold = f64::INFINITY;
        for n in &self.nodes {
            match n.demand(c, self.now, &env) {
                Demand::Ready => {
                    ready = true;
                    break;
                }
                Demand::HoldUntil(t) => hold = hold.min(t),
                Demand::Idle | Demand::Blocked => {}
            }
        }
        if ready {
            self.channels[channel as usize].grant_pending = true;
            let at = self.now + self.sc.timers.mac_slot;
            self.schedule(at, EventKind::MacGrant { channel });
        } else if hold.is_finite() {
            let ch = &mut self.channels[channel as usize];
            if ch.kick_at.is_none_or(|k| k > hold || k < self.now) {
                ch.kick_at = Some(hold);
                self.schedule(hold, EventKind::Kick { channel });
            }
        }
    }

    fn on_grant(&mut self, channel: u8) {
        self.channels[channel as usize].grant_pending = false;
        let c = ChannelId(channel);
        let env = NodeEnv {
            pus: &self.pus,
            params: &self.sc.protocol,
            tracing: self.sc.trace,
        };
        let demands: Vec<Demand> = self.nodes.iter().map(|n| n.demand(c, self.now, &env)).collect();
        let contenders: Vec<usize> = (0..demands.len()).filter(|&k| demands[k] == Demand::Ready).collect();
        if self.measuring() {
            self.ledger.pu_deferrals += demands.iter().filter(|d| **d == Demand::Blocked).count() as u64;
        }
        let Some(winner) = mac_grant_policy(&contenders, &mut self.mac_rng) else {
            self.kick(channel);
            return;
        };
        let mut fx = Effects::default();
        let now = self.now;
        let decision = self.nodes[winner].on_send_opportunity(c, now, &env, &mut fx);
        self.apply(winner, fx);
        match decision {
            SendDecision::Transmit(frame) => {
                let id = self.nodes[winner].id;
                if self.measuring() {
                    match frame.kind {
                        FrameKind::Data { .. } => {
                            self.ledger.transmissions += 1;
                            if frame.natives.len() > 1 {
                                self.ledger.coded_transmissions += 1;
                            }
                        }
                        FrameKind::Report => self.ledger.report_transmissions += 1,
                    }
                }
                let detail = json!({
                    "channel": channel,
                    "kind": if frame.is_data() { "data" } else { "report" },
                    "members": frame.header.xored,
                    "link_dest": frame.link_dest().map(|n| n.0),
                    "airtime": frame.airtime,
                });
                self.emit(Some(id), "transmit", detail);
                let end = frame.ends_at();
                self.channels[channel as usize].on_air = Some(*frame);
                self.schedule(end, EventKind::FrameEnd { channel });
            }
            SendDecision::Defer(reason) => {
                if self.measuring() {
                    match reason {
                        DeferReason::PrimaryUser => self.ledger.pu_deferrals += 1,
                        DeferReason::Hold { .. } => self.ledger.holds += 1,
                    }
                }
                self.kick(channel);
            }
            SendDecision::Idle => self.kick(channel),
        }
    }

    fn on_frame_end(&mut self, channel: u8) {
        let frame = self.channels[channel as usize]
            .on_air
            .take()
            .expect("frame end without a frame on air");
        let sender = self.index[&frame.sender];
        let (from, to) = (frame.sent_at, frame.ends_at());
        let c = frame.channel;
        let intended: Vec<usize> = frame.intended().iter().map(|n| self.index[n]).collect();
        let interrupted = self.pus.iter().any(|pu| {
            pu.channel == c
                && pu.active_during(from, to)
                && (pu.covers(&self.nodes[sender].position)
                    || intended.iter().any(|&r| pu.covers(&self.nodes[r].position)))
        });
        let receivers = self.neighbours[sender].clone();
        let links: Vec<ReceiverLink> = receivers
            .iter()
            .map(|&r| ReceiverLink {
                p_link: self.loss[sender][r],
                pu_at_receiver: self
                    .pus
                    .iter()
                    .any(|pu| pu.channel == c && pu.active_during(from, to) && pu.covers(&self.nodes[r].position)),
            })
            .collect();
        let got = frame_outcome(&links, interrupted, &mut self.link_rng);
        if interrupted && self.measuring() {
            self.ledger.pu_interrupted_frames += 1;
        }
        let link_dest = frame.link_dest();
        let mut link_received = false;
        let mut link_obtained = false;
        for (k, &r) in receivers.iter().enumerate() {
            if !got[k] {
                continue;
            }
            let mut fx = Effects::default();
            let env = NodeEnv {
                pus: &self.pus,
                params: &self.sc.protocol,
                tracing: self.sc.trace,
            };
            let out = self.nodes[r].on_receive(&frame, self.now, &env, &mut fx);
            if Some(self.nodes[r].id) == link_dest {
                link_received = out.link_frame_received;
                link_obtained = out.link_packet_obtained;
            }
            self.apply(r, fx);
        }
        if let (Some(dest), Some(first)) = (link_dest, frame.natives.first()) {
            let mut fx = Effects::default();
            let env = NodeEnv {
                pus: &self.pus,
                params: &self.sc.protocol,
                tracing: self.sc.trace,
            };
            let now = self.now;
            self.nodes[sender].on_link_result(first.id, link_received, link_obtained, dest, now, &env, &mut fx);
            self.apply(sender, fx);
        }
        let detail = json!({
            "channel": channel,
            "received_by": receivers.iter().zip(&got).filter(|(_, g)| **g).map(|(r, _)| self.nodes[*r].id.0).collect::<Vec<_>>(),
            "pu_interrupted": interrupted,
        });
        self.emit(Some(frame.sender), "frame_end", detail);
        self.kick_all();
    }

    fn touch_queue(&mut self, delta: isize) {
        let start = self.queue_clock.max(self.warmup);
        if self.now > start {
            self.ledger.queue_integral += self.queued_total as f64 * (self.now - start);
        }
        self.queue_clock = self.now;
        self.queued_total = (self.queued_total as isize + delta) as usize;
    }

    fn settle(&mut self, uid: usize) {
        let now = self.now;
        let p = &mut self.packets[uid];
        if p.copies == 0 && p.finished_at.is_none() {
            p.finished_at = Some(now);
        }
    }

    /// Folds a node's effects into the network-wide packet records and
    /// the ledger.
    fn apply(&mut self, node: usize, fx: Effects) {
        let id = self.nodes[node].id;
        let measuring = self.measuring();
        for p in &fx.enqueued {
            self.touch_queue(1);
            let rec = &mut self.packets[p.uid as usize];
            rec.copies += 1;
            rec.finished_at = None;
        }
        for p in &fx.acked {
            self.touch_queue(-1);
            self.packets[p.uid as usize].copies -= 1;
            self.settle(p.uid as usize);
        }
        for p in &fx.dropped_retry {
            self.touch_queue(-1);
            let rec = &mut self.packets[p.uid as usize];
            rec.copies -= 1;
            rec.reason = Some(DropReason::Retry);
            self.settle(p.uid as usize);
        }
        for p in &fx.overflowed {
            self.packets[p.uid as usize].reason = Some(DropReason::Overflow);
            self.settle(p.uid as usize);
            self.emit(Some(id), "drop_overflow", json!({ "packet": p.id.0 }));
        }
        for p in &fx.delivered {
            let rec = &mut self.packets[p.uid as usize];
            if rec.delivered {
                self.ledger.phantom_deliveries += 1;
                continue;
            }
            rec.delivered = true;
            if rec.cohort {
                self.ledger.delivered += 1;
            }
            self.settle(p.uid as usize);
            let delay = self.now - p.created_at;
            self.emit(Some(id), "deliver", json!({ "packet": p.id.0, "delay": delay }));
        }
        for t in &fx.timers {
            self.schedule(
                t.deadline,
                EventKind::AckTimeout {
                    node,
                    pid: t.pid,
                    generation: t.generation,
                },
            );
        }
        if measuring {
            self.ledger.retransmissions += fx.retransmissions as u64;
            self.ledger.recovered += fx.recovered as u64;
            self.ledger.undecodable += fx.undecodable as u64;
            self.ledger.duplicates += fx.duplicates as u64;
        }
        self.ledger.decode_mismatches += fx.decode_mismatches as u64;
        for (event, detail) in fx.trace {
            self.emit(Some(id), event, detail);
        }
    }

    /// Copies per packet recounted from the queues.
    fn copies_consistent(&self) -> bool {
        let mut counted: BTreeMap<u64, u32> = BTreeMap::new();
        for n in &self.nodes {
            for q in n.queue.iter() {
                *counted.entry(q.packet.uid).or_default() += 1;
            }
        }
        let total: usize = counted.values().map(|c| *c as usize).sum();
        total == self.queued_total
            && self
                .packets
                .iter()
                .enumerate()
                .all(|(uid, p)| counted.get(&(uid as u64)).copied().unwrap_or(0) == p.copies)
    }

    fn classify(&self) -> (u64, u64, u64, u64, u64) {
        let (mut delivered, mut retry, mut overflow, mut residual, mut unaccounted) = (0, 0, 0, 0, 0);
        for p in self.packets.iter().filter(|p| p.cohort) {
            match (p.delivered, p.copies, p.reason) {
                (true, _, _) => delivered += 1,
                (false, c, _) if c > 0 => residual += 1,
                (false, _, Some(DropReason::Retry)) => retry += 1,
                (false, _, Some(DropReason::Overflow)) => overflow += 1,
                (false, _, None) => unaccounted += 1,
            }
        }
        (delivered, retry, overflow, residual, unaccounted)
    }

    fn sample(&mut self) {
        if !self.copies_consistent() {
            self.ledger.conservation_violations += 1;
        }
        let (delivered, retry, overflow, residual, unaccounted) = self.classify();
        if delivered + retry + overflow + residual + unaccounted != self.ledger.generated {
            self.ledger.conservation_violations += 1;
        }
        self.touch_queue(0);
        let elapsed = (self.now - self.warmup).max(0.0);
        let avg_queue = if elapsed > 0.0 {
            self.ledger.queue_integral / (elapsed * self.nodes.len() as f64)
        } else {
            0.0
        };
        let loss = if self.ledger.generated > 0 {
            (retry + overflow) as f64 / self.ledger.generated as f64
        } else {
            0.0
        };
        self.ledger.series.push(Sample {
            t: self.now,
            delivered,
            transmissions: self.ledger.transmissions,
            avg_queue,
            loss,
        });
    }

    fn finish(mut self) -> RunOutput {
        self.touch_queue(0);
        if !self.copies_consistent() {
            self.ledger.conservation_violations += 1;
        }
        let (delivered, retry, overflow, residual, unaccounted) = self.classify();
        debug_assert_eq!(delivered, self.ledger.delivered);
        self.ledger.dropped_retry = retry;
        self.ledger.dropped_overflow = overflow;
        self.ledger.residual = residual;
        self.ledger.unaccounted = unaccounted;
        RunOutput {
            ledger: self.ledger,
            trace: self.trace,
        }
    }
}
