use super::*;
use crate::pu::PuState;

const CH: ChannelId = ChannelId(0);

fn params(mode: Mode) -> ProtocolParams {
    ProtocolParams {
        mode,
        coding_hold: 0.0,
        ..Default::default()
    }
}

fn pkt(id: u16, src: u16, dst: u16, hop: u16) -> NativePacket {
    NativePacket {
        id: PacketId(id),
        source: NodeId(src),
        final_dest: NodeId(dst),
        next_hop: NodeId(hop),
        size_bytes: 512,
        created_at: 0.0,
        uid: id as u64,
        payload: None,
    }
}

/// Node 0 at the origin with neighbours 1 (west), 2 (east) and 3 (north).
fn relay(p: &ProtocolParams, pus: &[PuProcess]) -> NodeState {
    let mut n = NodeState::new(NodeId(0), Position::new(0.0, 0.0), p);
    n.set_neighbours([
        (NodeId(1), Position::new(-200.0, 0.0)),
        (NodeId(2), Position::new(200.0, 0.0)),
        (NodeId(3), Position::new(0.0, 200.0)),
    ]);
    n.set_pu_roster(pus, 1);
    for k in 1..=3 {
        n.routes.insert(NodeId(k), NodeId(k));
        n.link_channels.insert(NodeId(k), CH);
    }
    n
}

fn leaf(id: u16, x: f64, p: &ProtocolParams) -> NodeState {
    let mut n = NodeState::new(NodeId(id), Position::new(x, 0.0), p);
    n.set_neighbours([(NodeId(0), Position::new(0.0, 0.0))]);
    n.set_pu_roster(&[], 1);
    n.routes.insert(NodeId(9), NodeId(0));
    n.link_channels.insert(NodeId(0), CH);
    n
}

fn env<'a>(pus: &'a [PuProcess], p: &'a ProtocolParams) -> NodeEnv<'a> {
    NodeEnv {
        pus,
        params: p,
        tracing: false,
    }
}

fn transmit(d: SendDecision) -> Frame {
    match d {
        SendDecision::Transmit(f) => *f,
        other => panic!("expected a transmission, got {other:?}"),
    }
}

fn believe_all(n: &mut NodeState, ids: &[u16]) {
    for b in n.beliefs.values_mut() {
        for &id in ids {
            b.observe(PacketId(id), 1.0, 0.0);
        }
    }
}

#[test]
fn single_packet_goes_native() {
    let p = params(Mode::Punch);
    let mut n = relay(&p, &[]);
    let mut fx = Effects::default();
    n.originate(pkt(1, 0, 1, 1), 0.0, &mut fx);
    let f = transmit(n.on_send_opportunity(CH, 0.0, &env(&[], &p), &mut fx));
    assert_eq!(f.header.xored, vec![(1, 1)]);
    assert_eq!(f.link_dest(), Some(NodeId(1)));
    assert!(n.queue.is_tagged(PacketId(1)));
    assert_eq!(n.pending_acks.len(), 1);
    assert!(fx.timers.is_empty(), "unicast member waits on the MAC ack");
}

#[test]
fn two_codable_packets_share_a_frame() {
    let p = params(Mode::Punch);
    let mut n = relay(&p, &[]);
    let mut fx = Effects::default();
    n.originate(pkt(1, 2, 1, 1), 0.0, &mut fx);
    n.originate(pkt(2, 1, 2, 2), 0.0, &mut fx);
    believe_all(&mut n, &[1, 2]);
    let f = transmit(n.on_send_opportunity(CH, 0.0, &env(&[], &p), &mut fx));
    assert_eq!(f.natives.len(), 2);
    assert_eq!(f.header.xored.len(), 2);
    assert_eq!(n.pending_acks.len(), 2);
    assert_eq!(fx.timers.len(), 1);
    // one link-layer destination, the other member only in the header
    let link = f.link_dest().unwrap();
    assert_eq!(f.intended().iter().filter(|h| **h == link).count(), 1);
    assert_eq!(n.queue.tagged().count(), 2);
}

#[test]
fn baseline_never_codes() {
    let p = params(Mode::Baseline);
    let mut n = relay(&p, &[]);
    let mut fx = Effects::default();
    n.originate(pkt(1, 2, 1, 1), 0.0, &mut fx);
    n.originate(pkt(2, 1, 2, 2), 0.0, &mut fx);
    believe_all(&mut n, &[1, 2]);
    let f = transmit(n.on_send_opportunity(CH, 0.0, &env(&[], &p), &mut fx));
    assert_eq!(f.header.xored, vec![(1, 1)]);
}

fn on_pu(x: f64) -> PuProcess {
    let mut pu = PuProcess::new(0, CH, Position::new(x, 0.0), 100.0, 1.0, 1.0).unwrap();
    pu.state = PuState::On;
    pu
}

#[test]
fn active_pu_defers() {
    let p = params(Mode::Punch);
    let pus = [on_pu(0.0)];
    let mut n = relay(&p, &pus);
    let mut fx = Effects::default();
    n.originate(pkt(1, 0, 1, 1), 0.0, &mut fx);
    let e = env(&pus, &p);
    assert_eq!(n.demand(CH, 0.0, &e), Demand::Blocked);
    assert_eq!(
        n.on_send_opportunity(CH, 0.0, &e, &mut fx),
        SendDecision::Defer(DeferReason::PrimaryUser)
    );
    assert!(n.pending_acks.is_empty());
    assert_eq!(n.queue.tagged().count(), 0);
}

#[test]
fn pu_at_one_receiver_only_blocks_that_link() {
    let p = params(Mode::Punch);
    let pus = [on_pu(250.0)];
    let mut n = relay(&p, &pus);
    let mut fx = Effects::default();
    n.originate(pkt(1, 0, 2, 2), 0.0, &mut fx);
    n.originate(pkt(2, 0, 1, 1), 0.0, &mut fx);
    let f = transmit(n.on_send_opportunity(CH, 0.0, &env(&pus, &p), &mut fx));
    assert_eq!(f.header.xored, vec![(2, 1)]);
}

fn data_frame(sender: u16, members: Vec<NativePacket>) -> Frame {
    let header = PunchHeader {
        xored: members.iter().map(|m| (m.id.0, m.next_hop.0)).collect(),
        ..Default::default()
    };
    Frame {
        sender: NodeId(sender),
        channel: CH,
        kind: FrameKind::Data {
            link_dest: members[0].next_hop,
        },
        header,
        natives: members,
        payload: None,
        size_bytes: 600,
        airtime: 0.005,
        sent_at: 0.0,
    }
}

#[test]
fn native_for_final_destination_is_delivered() {
    let p = params(Mode::Punch);
    let mut a = leaf(1, -200.0, &p);
    let mut fx = Effects::default();
    let out = a.on_receive(&data_frame(0, vec![pkt(5, 2, 1, 1)]), 0.01, &env(&[], &p), &mut fx);
    assert!(out.link_packet_obtained);
    assert_eq!(fx.delivered.len(), 1);
    // a second copy is suppressed
    let mut fx = Effects::default();
    a.on_receive(&data_frame(0, vec![pkt(5, 2, 1, 1)]), 0.02, &env(&[], &p), &mut fx);
    assert!(fx.delivered.is_empty());
    assert_eq!(fx.duplicates, 1);
}

#[test]
fn intermediate_hop_enqueues_with_next_hop() {
    let p = params(Mode::Punch);
    let mut r = relay(&p, &[]);
    r.routes.insert(NodeId(7), NodeId(2));
    let mut fx = Effects::default();
    r.on_receive(&data_frame(1, vec![pkt(5, 1, 7, 0)]), 0.01, &env(&[], &p), &mut fx);
    assert!(fx.delivered.is_empty());
    assert_eq!(fx.enqueued.len(), 1);
    assert_eq!(r.queue.get(PacketId(5)).unwrap().packet.next_hop, NodeId(2));
}

/// Decode condition over every subset a receiver might hold.
#[test]
fn decode_truth_table() {
    let p = params(Mode::Punch);
    for n in 1..=3u16 {
        for held in 0u32..(1 << n) {
            let mut a = leaf(1, -200.0, &p);
            let members: Vec<NativePacket> = (0..n).map(|k| pkt(10 + k, 0, 1 + k, 1 + k)).collect();
            for k in 0..n {
                if held & (1 << k) != 0 {
                    a.pool.insert(members[k as usize].clone(), 0.0);
                }
            }
            let missing = n - held.count_ones() as u16;
            let mut fx = Effects::default();
            let out = a.on_receive(&data_frame(0, members), 0.01, &env(&[], &p), &mut fx);
            assert_eq!(out.decodable, missing <= 1, "n={n} held={held:b}");
            assert_eq!(fx.undecodable, u32::from(missing > 1));
            assert_eq!(fx.recovered, u32::from(missing == 1 && n > 1));
            if missing <= 1 {
                assert!(a.pool.contains(PacketId(10)));
            } else {
                assert_eq!(a.pool.len(), held.count_ones() as usize);
            }
        }
    }
}

#[test]
fn xor_recovery_matches_original_payload() {
    let p = params(Mode::Punch);
    let mut r = relay(&p, &[]);
    let mut a_pkt = pkt(1, 2, 1, 1);
    let mut b_pkt = pkt(2, 1, 2, 2);
    a_pkt.payload = Some(b"alice".to_vec());
    b_pkt.payload = Some(b"bob and more".to_vec());
    let mut fx = Effects::default();
    r.originate(a_pkt.clone(), 0.0, &mut fx);
    r.originate(b_pkt.clone(), 0.0, &mut fx);
    believe_all(&mut r, &[1, 2]);
    let f = transmit(r.on_send_opportunity(CH, 0.0, &env(&[], &p), &mut fx));
    assert_eq!(f.natives.len(), 2);

    let mut alice = leaf(1, -200.0, &p);
    alice.pool.insert(b_pkt, 0.0);
    let mut fx = Effects::default();
    alice.on_receive(&f, 0.01, &env(&[], &p), &mut fx);
    assert_eq!(fx.recovered, 1);
    assert_eq!(fx.decode_mismatches, 0);
    assert_eq!(fx.delivered, vec![a_pkt]);
}

#[test]
fn first_timeout_clears_tag() {
    let p = params(Mode::Punch);
    let mut n = relay(&p, &[]);
    let mut fx = Effects::default();
    n.originate(pkt(1, 2, 1, 1), 0.0, &mut fx);
    n.originate(pkt(2, 1, 2, 2), 0.0, &mut fx);
    believe_all(&mut n, &[1, 2]);
    let e = env(&[], &p);
    transmit(n.on_send_opportunity(CH, 0.0, &e, &mut fx));
    let t = fx.timers[0];
    let out = n.on_ack_timeout(t.pid, t.generation, t.deadline, &e, &mut fx);
    assert_eq!(out, TimeoutOutcome::Requeued { retries: 1 });
    assert!(!n.queue.is_tagged(t.pid));
    assert_eq!(n.retries(t.pid), 1);
    assert!(!n.pending_acks.contains_key(&t.pid));
    // the same timer again is stale
    assert_eq!(
        n.on_ack_timeout(t.pid, t.generation, t.deadline, &e, &mut fx),
        TimeoutOutcome::Stale
    );
}

#[test]
fn retries_exhausted_drop_the_packet() {
    let p = params(Mode::Punch);
    let mut n = relay(&p, &[]);
    let e = env(&[], &p);
    let mut fx = Effects::default();
    n.originate(pkt(1, 0, 1, 1), 0.0, &mut fx);
    let mut now = 0.0;
    for attempt in 1..=5 {
        let f = transmit(n.on_send_opportunity(CH, now, &e, &mut fx));
        now = f.ends_at();
        n.on_link_result(PacketId(1), false, false, NodeId(1), now, &e, &mut fx);
        if attempt <= 4 {
            assert_eq!(n.retries(PacketId(1)), attempt);
            assert!(n.queue.contains(PacketId(1)));
        }
    }
    assert!(!n.queue.contains(PacketId(1)));
    assert_eq!(fx.dropped_retry.len(), 1);
    assert_eq!(fx.retransmissions, 4);
    assert!(n.pending_acks.is_empty());
}

#[test]
fn ack_before_deadline_removes_packet() {
    let p = params(Mode::Punch);
    let mut n = relay(&p, &[]);
    let e = env(&[], &p);
    let mut fx = Effects::default();
    n.originate(pkt(1, 2, 1, 1), 0.0, &mut fx);
    n.originate(pkt(2, 1, 2, 2), 0.0, &mut fx);
    believe_all(&mut n, &[1, 2]);
    let f = transmit(n.on_send_opportunity(CH, 0.0, &e, &mut fx));
    let link = f.link_dest().unwrap();
    let link_pid = PacketId(f.header.xored[0].0);
    n.on_link_result(link_pid, true, true, link, f.ends_at(), &e, &mut fx);
    assert!(!n.queue.contains(link_pid));

    // the other member is acked through a report from its next hop
    let (other_pid, other_hop) = f.header.xored[1];
    let report = Frame {
        sender: NodeId(other_hop),
        channel: CH,
        kind: FrameKind::Report,
        header: PunchHeader {
            ack_ids: vec![other_pid],
            ..Default::default()
        },
        natives: Vec::new(),
        payload: None,
        size_bytes: 24,
        airtime: 0.001,
        sent_at: 0.1,
    };
    n.on_receive(&report, 0.1, &e, &mut fx);
    assert!(n.queue.is_empty());
    assert!(n.pending_acks.is_empty());
    assert_eq!(fx.acked.len(), 2);
    let t = fx.timers[0];
    assert_eq!(
        n.on_ack_timeout(t.pid, t.generation, t.deadline, &e, &mut fx),
        TimeoutOutcome::Stale
    );
}

#[test]
fn receiver_acks_header_member_in_next_data_frame() {
    let p = params(Mode::Punch);
    let mut a = leaf(1, -200.0, &p);
    let e = env(&[], &p);
    let mut fx = Effects::default();
    let held = pkt(2, 1, 2, 2);
    a.pool.insert(held.clone(), 0.0);
    let mut f = data_frame(0, vec![held, pkt(1, 2, 1, 1)]);
    f.kind = FrameKind::Data { link_dest: NodeId(2) };
    let out = a.on_receive(&f, 0.01, &e, &mut fx);
    assert!(!out.link_frame_received);
    assert_eq!(fx.delivered.len(), 1);
    a.originate(pkt(40, 1, 9, 0), 0.02, &mut fx);
    let g = transmit(a.on_send_opportunity(CH, 0.02, &e, &mut fx));
    assert_eq!(g.header.ack_ids, vec![1]);
}

#[test]
fn reception_reports() {
    let p = params(Mode::Punch);
    let pu = PuProcess::new(3, CH, Position::new(10.0, 0.0), 250.0, 0.5, 0.5).unwrap();
    let mut n = relay(&p, &[pu]);
    let r = n.emit_reception_report(0.0, &p);
    assert!(r.pool_ids.is_empty());
    assert!(r.acked_ids.is_empty());
    assert_eq!(r.pu_entries, vec![(3, 0.5)]);
    assert_eq!(r.link_entries.len(), 3);
    assert!(n.has_pending_report());

    n.pool.insert(pkt(5, 0, 1, 1), 0.1);
    n.pool.insert(pkt(9, 0, 1, 1), 0.1);
    let r = n.emit_reception_report(0.2, &p);
    assert_eq!(r.pool_ids, [PacketId(5), PacketId(9)].into_iter().collect());
    let f = transmit(n.on_send_opportunity(CH, 0.2, &env(&[], &p), &mut Effects::default()));
    assert_eq!(f.kind, FrameKind::Report);
    assert_eq!(f.header.report_ids, vec![5, 9]);
    assert!(!n.has_pending_report());
}

#[test]
fn report_replaces_neighbour_belief() {
    let p = params(Mode::Punch);
    let mut n = relay(&p, &[]);
    n.beliefs.get_mut(&NodeId(1)).unwrap().observe(PacketId(4), 0.7, 0.0);
    let report = Frame {
        sender: NodeId(1),
        channel: CH,
        kind: FrameKind::Report,
        header: PunchHeader {
            report_ids: vec![8],
            link_block: vec![(0, p_link_to_u16(0.25))],
            ..Default::default()
        },
        natives: Vec::new(),
        payload: None,
        size_bytes: 28,
        airtime: 0.001,
        sent_at: 0.5,
    };
    n.on_receive(&report, 0.5, &env(&[], &p), &mut Effects::default());
    let b = n.belief(NodeId(1)).unwrap();
    assert_eq!(b.confidence(PacketId(4)), 0.0);
    assert_eq!(b.confidence(PacketId(8)), 1.0);
    // no own samples yet: the neighbour's view of the reverse link is the prior
    assert!((b.p_link - 0.25).abs() < 1e-4);
}

#[test]
fn hold_waits_for_partner() {
    let p = ProtocolParams {
        coding_hold: 0.02,
        ..params(Mode::Punch)
    };
    let mut r = relay(&p, &[]);
    let e = env(&[], &p);
    let mut fx = Effects::default();
    r.on_receive(&data_frame(1, vec![pkt(5, 1, 2, 0)]), 0.0, &e, &mut fx);
    assert_eq!(r.demand(CH, 0.005, &e), Demand::HoldUntil(0.02));
    assert!(matches!(
        r.on_send_opportunity(CH, 0.005, &e, &mut fx),
        SendDecision::Defer(DeferReason::Hold { .. })
    ));
    assert_eq!(r.demand(CH, 0.02, &e), Demand::Ready);
    let base = params(Mode::Baseline);
    let eb = env(&[], &base);
    let mut rb = relay(&base, &[]);
    rb.on_receive(&data_frame(1, vec![pkt(5, 1, 2, 0)]), 0.0, &eb, &mut fx);
    assert_eq!(rb.demand(CH, 0.005, &eb), Demand::Ready);
}
