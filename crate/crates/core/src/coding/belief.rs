use std::collections::{BTreeMap, BTreeSet};

use crate::types::{ChannelId, NodeId, PacketId, SimTime};

/// A PU known to affect the link towards a neighbour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PuObservation {
    pub index: u16,
    pub channel: ChannelId,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeliefEntry {
    /// Confidence that the neighbour holds the packet.
    pub confidence: f64,
    pub at: SimTime,
}

/// What a node believes about one neighbour.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighbourBelief {
    pub pool: BTreeMap<PacketId, BeliefEntry>,
    /// Loss probability on the link from this node to the neighbour.
    pub p_link: f64,
    pub link_pus: Vec<PuObservation>,
    pub last_report_at: Option<SimTime>,
}

impl NeighbourBelief {
    pub fn confidence(&self, id: PacketId) -> f64 {
        self.pool.get(&id).map_or(0.0, |e| e.confidence)
    }

    /// Raises the confidence for `id` to at least `confidence`.
    pub fn observe(&mut self, id: PacketId, confidence: f64, at: SimTime) {
        let confidence = confidence.clamp(0.0, 1.0);
        if confidence <= 0.0 {
            return;
        }
        let entry = self.pool.entry(id).or_insert(BeliefEntry { confidence, at });
        if confidence >= entry.confidence {
            entry.confidence = confidence;
            entry.at = at;
        }
    }

    /// Replaces everything known up to `issued_at` with the reported pool.
    /// Guesses made after the report was issued survive.
    pub fn apply_full_report(&mut self, ids: &BTreeSet<PacketId>, issued_at: SimTime) {
        self.pool.retain(|id, e| ids.contains(id) || e.at > issued_at);
        for &id in ids {
            self.pool.insert(
                id,
                BeliefEntry {
                    confidence: 1.0,
                    at: issued_at,
                },
            );
        }
        self.last_report_at = Some(issued_at);
    }

    pub fn expire(&mut self, now: SimTime, ttl: f64) {
        self.pool.retain(|_, e| now - e.at <= ttl);
    }

    pub fn lambdas_on(&self, channel: ChannelId) -> Vec<f64> {
        self.link_pus
            .iter()
            .filter(|p| p.channel == channel)
            .map(|p| p.lambda)
            .collect()
    }
}

pub type BeliefTable = BTreeMap<NodeId, NeighbourBelief>;
