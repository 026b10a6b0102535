//! Inputs shared by the benchmarks.

use punch_core::coding::{BeliefTable, NeighbourBelief};
use punch_core::node::{Mode, ProtocolParams};
use punch_core::sim::{build_random_topology, NetworkParams, RandomLayout, Scenario};
use punch_core::wire::PunchHeader;
use punch_core::{NativePacket, NodeId, PacketId};

/// `n` queued packets for `n` distinct neighbours, each neighbour holding
/// every other packet.
pub fn full_queue(n: u16) -> (Vec<NativePacket>, BeliefTable) {
    let pkts: Vec<NativePacket> = (0..n)
        .map(|k| NativePacket {
            id: PacketId(k),
            source: NodeId(1000),
            final_dest: NodeId(k),
            next_hop: NodeId(k),
            size_bytes: 512,
            created_at: 0.0,
            uid: k as u64,
            payload: None,
        })
        .collect();
    let mut beliefs = BeliefTable::new();
    for h in 0..n {
        let mut b = NeighbourBelief {
            p_link: 0.05,
            ..Default::default()
        };
        for k in (0..n).filter(|&k| k != h) {
            b.observe(PacketId(k), if (h + k) % 3 == 0 { 0.4 } else { 1.0 }, 0.0);
        }
        beliefs.insert(NodeId(h), b);
    }
    (pkts, beliefs)
}

/// A header with every block populated.
pub fn busy_header() -> PunchHeader {
    PunchHeader {
        xored: (0..4).map(|k| (k, k + 10)).collect(),
        report_ids: (0..32).collect(),
        ack_ids: (100..108).collect(),
        pu_block: (0..3).map(|k| (k, 128)).collect(),
        link_block: (0..6).map(|k| (k, 3000)).collect(),
    }
}

pub fn random_scenario(mode: Mode, duration: f64) -> Scenario {
    let net = NetworkParams {
        duration,
        protocol: ProtocolParams {
            mode,
            ..Default::default()
        },
        ..Default::default()
    };
    build_random_topology(&RandomLayout::default(), &net).expect("default layout builds")
}
