//! Shared domain vocabulary: identifiers, native and encoded packets, the
//! per-node output queue and packet pool, and reception reports.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::error::UsageError;

/// Simulation time in seconds.
pub type SimTime = f64;

/// Identifier of a simulated node. Fits the 16-bit next-hop and neighbour
/// fields of the wire header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u16);

/// 16-bit packet identifier carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PacketId(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelId(pub u8);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for PacketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ch{}", self.0)
    }
}

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ChannelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Packet identifier layout: six low bits of the source in the top of the
/// word, a ten-bit per-source sequence number below.
pub const PACKET_SEQ_BITS: u32 = 10;
pub const PACKET_SEQ_MODULUS: u32 = 1 << PACKET_SEQ_BITS;

impl PacketId {
    pub fn compose(source: NodeId, seq: u32) -> PacketId {
        let src = (source.0 & 0x3f) << PACKET_SEQ_BITS;
        PacketId(src | (seq % PACKET_SEQ_MODULUS) as u16)
    }
}

/// Default application packet size (bytes).
pub const DEFAULT_PACKET_BYTES: u32 = 512;

/// A single original packet as generated at its source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NativePacket {
    pub id: PacketId,
    pub source: NodeId,
    pub final_dest: NodeId,
    pub next_hop: NodeId,
    pub size_bytes: u32,
    pub created_at: SimTime,
    /// Simulation-wide unique key used by the metrics ledger. Never on the wire.
    #[serde(skip)]
    pub uid: u64,
    /// Payload bytes, only present when a run enables payload tracking.
    #[serde(skip)]
    pub payload: Option<Vec<u8>>,
}

impl NativePacket {
    /// Copy of this packet re-addressed to a new next hop.
    pub fn with_next_hop(&self, next_hop: NodeId) -> NativePacket {
        NativePacket {
            next_hop,
            ..self.clone()
        }
    }
}

/// The member list of an XOR-encoded transmission. A single member is a
/// native transmission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedPacket {
    pub members: Vec<(PacketId, NodeId)>,
    pub size_bytes: u32,
}

impl EncodedPacket {
    /// Builds an encoding from its members. `header_bytes` is added on top
    /// of the largest member.
    pub fn new(members: &[&NativePacket], header_bytes: u32) -> Result<EncodedPacket, UsageError> {
        if members.is_empty() {
            return Err(UsageError::EmptyEncoding);
        }
        let mut ids = BTreeSet::new();
        let mut hops = BTreeSet::new();
        for m in members {
            if !ids.insert(m.id) {
                return Err(UsageError::DuplicateMember(m.id));
            }
            if !hops.insert(m.next_hop) {
                return Err(UsageError::SharedNextHop(m.next_hop));
            }
        }
        let max = members.iter().map(|m| m.size_bytes).max().unwrap_or(0);
        Ok(EncodedPacket {
            members: members.iter().map(|m| (m.id, m.next_hop)).collect(),
            size_bytes: max + header_bytes,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_native(&self) -> bool {
        self.members.len() == 1
    }
}

/// Bytewise XOR of all payloads. Shorter payloads are zero-padded to the
/// longest one.
pub fn xor_combine<P: AsRef<[u8]>>(payloads: &[P]) -> Result<Vec<u8>, UsageError> {
    if payloads.is_empty() {
        return Err(UsageError::EmptyXor);
    }
    let len = payloads.iter().map(|p| p.as_ref().len()).max().unwrap_or(0);
    let mut out = vec![0u8; len];
    for p in payloads {
        for (o, b) in out.iter_mut().zip(p.as_ref()) {
            *o ^= *b;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub packet: NativePacket,
    pub inserted_at: SimTime,
}

pub const DEFAULT_POOL_TTL: f64 = 2.0;
pub const DEFAULT_POOL_CAPACITY: usize = 512;

/// Packets a node has heard recently, kept for decoding.
#[derive(Debug, Clone)]
pub struct PacketPool {
    entries: BTreeMap<PacketId, PoolEntry>,
    by_age: BTreeMap<(OrderedFloat<f64>, u64), PacketId>,
    stamps: BTreeMap<PacketId, (OrderedFloat<f64>, u64)>,
    next_stamp: u64,
    ttl: f64,
    capacity: usize,
}

impl Default for PacketPool {
    fn default() -> Self {
        PacketPool::new(DEFAULT_POOL_TTL, DEFAULT_POOL_CAPACITY)
    }
}

impl PacketPool {
    pub fn new(ttl: f64, capacity: usize) -> PacketPool {
        assert!(capacity > 0, "pool capacity must be positive");
        PacketPool {
            entries: BTreeMap::new(),
            by_age: BTreeMap::new(),
            stamps: BTreeMap::new(),
            next_stamp: 0,
            ttl,
            capacity,
        }
    }

    pub fn ttl(&self) -> f64 {
        self.ttl
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: PacketId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn get(&self, id: PacketId) -> Option<&PoolEntry> {
        self.entries.get(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = PacketId> + '_ {
        self.entries.keys().copied()
    }

    /// Inserts `packet`. A duplicate id only refreshes the timestamp; at
    /// capacity the oldest entry is evicted first.
    pub fn insert(&mut self, packet: NativePacket, now: SimTime) {
        let id = packet.id;
        if let Some(old) = self.stamps.remove(&id) {
            self.by_age.remove(&old);
            let entry = self.entries.get_mut(&id).expect("stamp without entry");
            entry.inserted_at = now;
            self.stamp(id, now);
            return;
        }
        if self.entries.len() >= self.capacity {
            if let Some((_, oldest)) = self.by_age.pop_first() {
                self.stamps.remove(&oldest);
                self.entries.remove(&oldest);
            }
        }
        self.entries.insert(
            id,
            PoolEntry {
                packet,
                inserted_at: now,
            },
        );
        self.stamp(id, now);
    }

    fn stamp(&mut self, id: PacketId, now: SimTime) {
        let key = (OrderedFloat(now), self.next_stamp);
        self.next_stamp += 1;
        self.by_age.insert(key, id);
        self.stamps.insert(id, key);
    }

    /// Removes every entry with `now - inserted_at > ttl`. Returns how many
    /// were removed.
    pub fn prune(&mut self, now: SimTime) -> usize {
        let mut removed = 0;
        while let Some((&(t, _), &id)) = self.by_age.first_key_value() {
            if now - t.0 <= self.ttl {
                break;
            }
            self.by_age.pop_first();
            self.stamps.remove(&id);
            self.entries.remove(&id);
            removed += 1;
        }
        removed
    }
}

/// A queued packet together with local bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct QueuedPacket {
    pub packet: NativePacket,
    pub enqueued_at: SimTime,
    /// True when the packet arrived from a neighbour rather than the local
    /// application.
    pub forwarded: bool,
}

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;

/// FIFO output queue with transmitted-awaiting-ack tags and tail drop.
#[derive(Debug, Clone)]
pub struct OutputQueue {
    packets: VecDeque<QueuedPacket>,
    sent_tags: BTreeSet<PacketId>,
    capacity: usize,
}

impl Default for OutputQueue {
    fn default() -> Self {
        OutputQueue::new(DEFAULT_QUEUE_CAPACITY)
    }
}

impl OutputQueue {
    pub fn new(capacity: usize) -> OutputQueue {
        assert!(capacity > 0, "queue capacity must be positive");
        OutputQueue {
            packets: VecDeque::new(),
            sent_tags: BTreeSet::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends at the tail. On overflow the packet is handed back.
    pub fn push(&mut self, entry: QueuedPacket) -> Result<(), QueuedPacket> {
        if self.packets.len() >= self.capacity {
            return Err(entry);
        }
        self.packets.push_back(entry);
        Ok(())
    }

    pub fn contains(&self, id: PacketId) -> bool {
        self.packets.iter().any(|q| q.packet.id == id)
    }

    pub fn get(&self, id: PacketId) -> Option<&QueuedPacket> {
        self.packets.iter().find(|q| q.packet.id == id)
    }

    pub fn is_tagged(&self, id: PacketId) -> bool {
        self.sent_tags.contains(&id)
    }

    pub fn tagged(&self) -> impl Iterator<Item = PacketId> + '_ {
        self.sent_tags.iter().copied()
    }

    /// Marks a queued packet as transmitted. Returns false if absent.
    pub fn tag(&mut self, id: PacketId) -> bool {
        if self.contains(id) {
            self.sent_tags.insert(id);
            true
        } else {
            false
        }
    }

    pub fn untag(&mut self, id: PacketId) -> bool {
        self.sent_tags.remove(&id)
    }

    pub fn remove(&mut self, id: PacketId) -> Option<QueuedPacket> {
        let pos = self.packets.iter().position(|q| q.packet.id == id)?;
        self.sent_tags.remove(&id);
        self.packets.remove(pos)
    }

    /// Removes and returns the first untagged packet.
    pub fn pop_untagged(&mut self) -> Option<QueuedPacket> {
        let pos = self
            .packets
            .iter()
            .position(|q| !self.sent_tags.contains(&q.packet.id))?;
        self.packets.remove(pos)
    }

    /// Untagged packets in FIFO order.
    pub fn untagged(&self) -> impl Iterator<Item = &QueuedPacket> + '_ {
        self.packets
            .iter()
            .filter(move |q| !self.sent_tags.contains(&q.packet.id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueuedPacket> + '_ {
        self.packets.iter()
    }
}

/// Periodic advertisement of a node's pool contents, acknowledgements,
/// observed PUs and measured link losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceptionReport {
    pub origin: NodeId,
    pub pool_ids: BTreeSet<PacketId>,
    pub acked_ids: BTreeSet<PacketId>,
    pub pu_entries: Vec<(u16, f64)>,
    pub link_entries: Vec<(NodeId, f64)>,
    pub issued_at: SimTime,
}
