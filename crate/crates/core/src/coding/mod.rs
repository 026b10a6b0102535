//! Packet selection: build the coding graph over the output queue, weight
//! each edge by the probability that the receiver decodes, reduce it to
//! the coding gain graph, threshold it and pick a clique to XOR.

mod belief;
mod clique;
mod graph;

pub use belief::{BeliefEntry, BeliefTable, NeighbourBelief, PuObservation};
pub use clique::{exact_max_clique, greedy_max_clique, EXACT_CLIQUE_LIMIT};
pub use graph::{CodingGainGraph, CodingGraph, SimpleGraph, Vertex};

use crate::pu::p_active;
use crate::types::{ChannelId, NativePacket, NodeId, PacketId};

/// Minimum acceptable pairwise coding gain.
pub const DEFAULT_THETA: f64 = 1.5;
/// Packets from the head of the queue considered per send.
pub const DEFAULT_WINDOW: usize = 16;

/// Probability that a receiver decodes its packet from an encoding:
/// `(1 - p_active) * p_dest * (1 - p_link)`.
pub fn edge_weight(p_active: f64, p_dest: f64, p_link: f64) -> f64 {
    ((1.0 - p_active) * p_dest * (1.0 - p_link)).clamp(0.0, 1.0)
}

/// Read-only view a sender uses to weight its coding graph on one channel.
#[derive(Debug, Clone, Copy)]
pub struct CodingContext<'a> {
    pub beliefs: &'a BeliefTable,
    pub channel: ChannelId,
    /// Window over which a PU activation would spoil the transmission.
    pub tau: f64,
    /// When false the PU term is forced to zero.
    pub pu_aware: bool,
}

impl CodingContext<'_> {
    /// `(p_active, p_link)` on the link to `dest`, if `dest` is known.
    pub fn link_factors(&self, dest: NodeId) -> Option<(f64, f64)> {
        let belief = self.beliefs.get(&dest)?;
        let pa = if self.pu_aware {
            p_active(&belief.lambdas_on(self.channel), self.tau).unwrap_or(0.0)
        } else {
            0.0
        };
        Some((pa, belief.p_link.clamp(0.0, 1.0)))
    }

    pub fn p_dest(&self, dest: NodeId, id: PacketId) -> f64 {
        self.beliefs.get(&dest).map_or(0.0, |b| b.confidence(id))
    }

    /// `w_ij`: weight for decoding `i` at its next hop when coded with `j`.
    /// Missing beliefs give zero.
    pub fn weight(&self, i: &NativePacket, j: &NativePacket) -> f64 {
        if i.next_hop == j.next_hop {
            return 0.0;
        }
        match self.link_factors(i.next_hop) {
            Some((pa, pl)) => edge_weight(pa, self.p_dest(i.next_hop, j.id), pl),
            None => 0.0,
        }
    }
}

/// Builds the coding graph over the first `window` candidates (FIFO order,
/// untagged packets only).
pub fn build_coding_graph(candidates: &[&NativePacket], ctx: &CodingContext<'_>, window: usize) -> CodingGraph {
    let take = candidates.len().min(window);
    let vertices = candidates[..take]
        .iter()
        .enumerate()
        .map(|(k, p)| Vertex {
            queue_index: k,
            id: p.id,
            dest_tag: p.next_hop,
        })
        .collect();
    let mut g = CodingGraph::new(vertices);
    for i in 0..take {
        for j in 0..take {
            if i == j || candidates[i].next_hop == candidates[j].next_hop {
                continue;
            }
            let w = ctx.weight(candidates[i], candidates[j]);
            if w > 0.0 {
                g.set_weight(i, j, w);
            }
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanMember {
    /// Index into the candidate list the plan was built from.
    pub queue_index: usize,
    pub id: PacketId,
    pub next_hop: NodeId,
    /// Predicted probability that `next_hop` decodes this member.
    pub decode_probability: f64,
}

/// Packets chosen for one transmission. The first member is the weakest
/// receiver and becomes the link-layer destination.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingPlan {
    pub members: Vec<PlanMember>,
    /// Expected number of natives delivered by this transmission.
    pub predicted_delivery: f64,
}

impl EncodingPlan {
    pub fn is_native(&self) -> bool {
        self.members.len() == 1
    }

    pub fn link_dest(&self) -> NodeId {
        self.members[0].next_hop
    }
}

/// Runs the full selection pipeline. Returns `None` when there is nothing
/// to send.
pub fn select_encoding(
    candidates: &[&NativePacket],
    ctx: &CodingContext<'_>,
    theta: f64,
    window: usize,
) -> Option<EncodingPlan> {
    if candidates.is_empty() {
        return None;
    }
    let graph = build_coding_graph(candidates, ctx, window);
    let clique = greedy_max_clique(&graph.to_gain_graph().threshold(theta));
    Some(plan_for(candidates, &clique, ctx))
}

/// Member ordering and decode predictions for a chosen vertex set.
pub fn plan_for(candidates: &[&NativePacket], clique: &[usize], ctx: &CodingContext<'_>) -> EncodingPlan {
    let mut members: Vec<PlanMember> = clique
        .iter()
        .map(|&i| {
            let p = candidates[i];
            let (pa, pl) = ctx.link_factors(p.next_hop).unwrap_or((0.0, 0.0));
            let partners: f64 = clique
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| ctx.p_dest(p.next_hop, candidates[j].id))
                .product();
            PlanMember {
                queue_index: i,
                id: p.id,
                next_hop: p.next_hop,
                decode_probability: edge_weight(pa, partners, pl),
            }
        })
        .collect();
    members.sort_by(|a, b| {
        a.decode_probability
            .total_cmp(&b.decode_probability)
            .then(a.queue_index.cmp(&b.queue_index))
    });
    let weakest = members.remove(0);
    members.sort_by_key(|m| m.queue_index);
    members.insert(0, weakest);
    let predicted_delivery = members.iter().map(|m| m.decode_probability).sum();
    EncodingPlan {
        members,
        predicted_delivery,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::belief::PuObservation;

    fn pkt(id: u16, hop: u16) -> NativePacket {
        NativePacket {
            id: PacketId(id),
            source: NodeId(100),
            final_dest: NodeId(hop),
            next_hop: NodeId(hop),
            size_bytes: 512,
            created_at: 0.0,
            uid: id as u64,
            payload: None,
        }
    }

    fn perfect(hops: &[u16], ids: &[u16]) -> BeliefTable {
        let mut t = BeliefTable::new();
        for &h in hops {
            let mut b = NeighbourBelief::default();
            for &id in ids {
                b.observe(PacketId(id), 1.0, 0.0);
            }
            t.insert(NodeId(h), b);
        }
        t
    }

    fn ctx(beliefs: &BeliefTable) -> CodingContext<'_> {
        CodingContext {
            beliefs,
            channel: ChannelId(0),
            tau: 1.0,
            pu_aware: true,
        }
    }

    #[test]
    fn edge_weight_examples() {
        assert_eq!(edge_weight(0.0, 1.0, 0.0), 1.0);
        assert_eq!(edge_weight(0.3, 0.0, 0.2), 0.0);
        // (1 - 0.393469340287) * 1.0 * 0.9 = 0.545877593741
        let w = edge_weight(0.393_469_340_287_366_6, 1.0, 0.1);
        assert!((w - 0.545_877_593_741_37).abs() < 1e-9, "{w}");
    }

    #[test]
    fn weight_uses_link_pus_on_channel() {
        let mut beliefs = perfect(&[1, 2], &[10, 11]);
        let b = beliefs.get_mut(&NodeId(1)).unwrap();
        b.p_link = 0.1;
        b.link_pus.push(PuObservation {
            index: 0,
            channel: ChannelId(0),
            lambda: 0.5,
        });
        b.link_pus.push(PuObservation {
            index: 1,
            channel: ChannelId(1),
            lambda: 5.0,
        });
        let c = ctx(&beliefs);
        let w = c.weight(&pkt(10, 1), &pkt(11, 2));
        assert!((w - 0.545_877_593_741_37).abs() < 1e-9, "{w}");
        let ignore = CodingContext { pu_aware: false, ..c };
        assert!((ignore.weight(&pkt(10, 1), &pkt(11, 2)) - 0.9).abs() < 1e-12);
        // unknown neighbour: no edge
        assert_eq!(c.weight(&pkt(10, 7), &pkt(11, 2)), 0.0);
    }

    #[test]
    fn graph_examples() {
        let beliefs = perfect(&[1, 2, 3], &[0, 1, 2]);
        let c = ctx(&beliefs);
        let empty = build_coding_graph(&[], &c, DEFAULT_WINDOW);
        assert!(empty.vertices.is_empty());

        let (a, b) = (pkt(0, 1), pkt(1, 1));
        let same = build_coding_graph(&[&a, &b], &c, DEFAULT_WINDOW);
        assert_eq!(same.vertices.len(), 2);
        assert_eq!(same.edge_count(), 0);

        let (x, y, z) = (pkt(0, 1), pkt(1, 2), pkt(2, 3));
        let full = build_coding_graph(&[&x, &y, &z], &c, DEFAULT_WINDOW);
        assert_eq!(full.edge_count(), 6);
        assert!(full.weights.values().all(|w| *w == 1.0));
    }

    #[test]
    fn window_bounds_vertices() {
        let hops: Vec<u16> = (1..=20).collect();
        let ids: Vec<u16> = (0..20).collect();
        let beliefs = perfect(&hops, &ids);
        let pkts: Vec<NativePacket> = (0..20).map(|k| pkt(k, k + 1)).collect();
        let refs: Vec<&NativePacket> = pkts.iter().collect();
        let g = build_coding_graph(&refs, &ctx(&beliefs), 16);
        assert_eq!(g.vertices.len(), 16);
        assert_eq!(g.edge_count(), 16 * 15);
    }

    #[test]
    fn select_single_and_pair() {
        let beliefs = perfect(&[1, 2], &[0, 1]);
        let c = ctx(&beliefs);
        let a = pkt(0, 1);
        let plan = select_encoding(&[&a], &c, DEFAULT_THETA, DEFAULT_WINDOW).unwrap();
        assert!(plan.is_native());
        assert_eq!(plan.link_dest(), NodeId(1));

        let b = pkt(1, 2);
        let plan = select_encoding(&[&a, &b], &c, DEFAULT_THETA, DEFAULT_WINDOW).unwrap();
        assert_eq!(plan.members.len(), 2);
        assert!((plan.predicted_delivery - 2.0).abs() < 1e-12);
        assert!(select_encoding(&[], &c, DEFAULT_THETA, DEFAULT_WINDOW).is_none());
    }

    #[test]
    fn weakest_member_leads() {
        let mut beliefs = perfect(&[1, 2], &[0, 1]);
        beliefs.get_mut(&NodeId(2)).unwrap().p_link = 0.2;
        let c = ctx(&beliefs);
        let (a, b) = (pkt(0, 1), pkt(1, 2));
        let plan = select_encoding(&[&a, &b], &c, DEFAULT_THETA, DEFAULT_WINDOW).unwrap();
        assert_eq!(plan.link_dest(), NodeId(2));
        assert_eq!(plan.members[1].next_hop, NodeId(1));
    }

    #[test]
    fn below_threshold_pair_goes_native() {
        let mut beliefs = perfect(&[1, 2], &[0, 1]);
        beliefs.get_mut(&NodeId(1)).unwrap().p_link = 0.6;
        let c = ctx(&beliefs);
        let (a, b) = (pkt(0, 1), pkt(1, 2));
        // gain 0.4 + 1.0 < 1.5
        let plan = select_encoding(&[&a, &b], &c, DEFAULT_THETA, DEFAULT_WINDOW).unwrap();
        assert!(plan.is_native());
        assert_eq!(plan.members[0].id, PacketId(0));
    }
}
