//! Scenario builders, neighbourhoods, shortest-path routes and per-link
//! channel choice.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rng::{stream, Stream};
use super::scenario::{FlowSpec, LinkLoss, NodeSpec, PuSpec, Scenario, ScenarioError, Timers};
use crate::node::ProtocolParams;
use crate::pu::{Position, DEFAULT_PU_RADIUS};
use crate::types::{ChannelId, NodeId, DEFAULT_PACKET_BYTES};

/// Parameters shared by both topology families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkParams {
    pub channels: u8,
    pub pu_count: usize,
    pub lambda: f64,
    pub mu: Option<f64>,
    pub pu_radius: f64,
    /// Per-flow CBR rate.
    pub rate_bps: f64,
    pub packet_bytes: u32,
    pub radio_range: f64,
    pub link_loss: LinkLoss,
    pub duration: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Start every flow at the same instant instead of a random offset.
    pub synchronized_flows: bool,
    pub protocol: ProtocolParams,
    pub timers: Timers,
    pub carry_payloads: bool,
    pub trace: bool,
}

impl Default for NetworkParams {
    fn default() -> Self {
        NetworkParams {
            channels: 3,
            pu_count: 3,
            lambda: 0.5,
            mu: None,
            pu_radius: DEFAULT_PU_RADIUS,
            rate_bps: 32_000.0,
            packet_bytes: DEFAULT_PACKET_BYTES,
            radio_range: 250.0,
            link_loss: LinkLoss::default(),
            duration: 60.0,
            warmup_fraction: 0.1,
            seed: 1,
            synchronized_flows: false,
            protocol: ProtocolParams::default(),
            timers: Timers::default(),
            carry_payloads: false,
            trace: false,
        }
    }
}

impl NetworkParams {
    fn scenario(&self, nodes: Vec<NodeSpec>, pus: Vec<PuSpec>, pairs: &[(NodeId, NodeId)]) -> Scenario {
        Scenario {
            nodes,
            radio_range: self.radio_range,
            channels: self.channels,
            pus,
            flows: pairs
                .iter()
                .map(|&(src, dst)| FlowSpec {
                    src,
                    dst,
                    rate_bps: self.rate_bps,
                    packet_bytes: self.packet_bytes,
                    start: self.synchronized_flows.then_some(0.0),
                })
                .collect(),
            link_loss: self.link_loss,
            duration: self.duration,
            warmup_fraction: self.warmup_fraction,
            seed: self.seed,
            protocol: ProtocolParams {
                packet_bytes: self.packet_bytes,
                ..self.protocol.clone()
            },
            timers: self.timers,
            carry_payloads: self.carry_payloads,
            trace: self.trace,
        }
    }

    /// PUs placed uniformly on `[x0, x0 + side] x [y0, y0 + side]`, each on
    /// a uniform channel. Draws come from a dedicated stream in PU order,
    /// so raising `pu_count` keeps the earlier PUs in place.
    fn place_pus(&self, x0: f64, y0: f64, side: f64) -> Vec<PuSpec> {
        let mut rng = stream(self.seed, Stream::PuLayout);
        (0..self.pu_count)
            .map(|k| {
                let x = x0 + rng.gen::<f64>() * side;
                let y = y0 + rng.gen::<f64>() * side;
                let c = rng.gen_range(0..self.channels.max(1));
                PuSpec {
                    index: k as u16,
                    channel: ChannelId(c),
                    position: Position::new(x, y),
                    radius: self.pu_radius,
                    lambda: self.lambda,
                    mu: self.mu,
                }
            })
            .collect()
    }
}

/// A central relay (node 0) with `leaves` nodes on a circle of radius
/// `leaf_distance`. Opposite leaves form a bidirectional connection through
/// the relay. Two leaves give the three-node chain.
pub fn build_star_topology(leaves: usize, leaf_distance: f64, net: &NetworkParams) -> Result<Scenario, ScenarioError> {
    if leaves < 2 || !leaves.is_multiple_of(2) {
        return Err(ScenarioError::single(format!(
            "star needs an even number of leaves, at least 2 (got {leaves})"
        )));
    }
    if leaf_distance > net.radio_range || 2.0 * leaf_distance <= net.radio_range {
        return Err(ScenarioError::single(format!(
            "leaf distance {leaf_distance} must reach the centre but not the opposite leaf (range {})",
            net.radio_range
        )));
    }
    let mut nodes = vec![NodeSpec {
        id: NodeId(0),
        position: Position::new(0.0, 0.0),
    }];
    for k in 0..leaves {
        let a = std::f64::consts::TAU * k as f64 / leaves as f64;
        nodes.push(NodeSpec {
            id: NodeId(k as u16 + 1),
            position: Position::new(leaf_distance * a.cos(), leaf_distance * a.sin()),
        });
    }
    let half = leaves / 2;
    let mut pairs = Vec::new();
    for k in 0..half {
        let (a, b) = (NodeId(k as u16 + 1), NodeId((k + half) as u16 + 1));
        pairs.push((a, b));
        pairs.push((b, a));
    }
    let extent = leaf_distance + net.radio_range / 2.0;
    let pus = net.place_pus(-extent, -extent, 2.0 * extent);
    let s = net.scenario(nodes, pus, &pairs);
    s.validate()?;
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomLayout {
    pub nodes: usize,
    pub flows: usize,
    pub side: f64,
    pub min_median_degree: f64,
    pub max_median_degree: f64,
    pub max_attempts: usize,
}

impl Default for RandomLayout {
    fn default() -> Self {
        RandomLayout {
            nodes: 20,
            flows: 8,
            side: 1000.0,
            min_median_degree: 4.0,
            max_median_degree: 6.0,
            max_attempts: 1000,
        }
    }
}

/// Nodes uniform on a square, resampled until connected with a median
/// degree inside the configured band. Flows start at distinct sources and
/// end at distinct destinations.
pub fn build_random_topology(layout: &RandomLayout, net: &NetworkParams) -> Result<Scenario, ScenarioError> {
    if layout.flows > layout.nodes || layout.nodes < 2 {
        return Err(ScenarioError::single(format!(
            "{} flows need at least as many nodes (got {})",
            layout.flows, layout.nodes
        )));
    }
    let mut rng = stream(net.seed, Stream::Topology);
    for _ in 0..layout.max_attempts {
        let nodes: Vec<NodeSpec> = (0..layout.nodes)
            .map(|k| NodeSpec {
                id: NodeId(k as u16),
                position: Position::new(rng.gen::<f64>() * layout.side, rng.gen::<f64>() * layout.side),
            })
            .collect();
        let adj = adjacency(&nodes, net.radio_range);
        if !connected(&adj) {
            continue;
        }
        let median = median_degree(&adj);
        if median < layout.min_median_degree || median > layout.max_median_degree {
            continue;
        }
        let ids: Vec<NodeId> = nodes.iter().map(|n| n.id).collect();
        let sources: Vec<NodeId> = ids.choose_multiple(&mut rng, layout.flows).copied().collect();
        let Some(dests) = distinct_destinations(&sources, &ids, &mut rng) else {
            continue;
        };
        let pairs: Vec<(NodeId, NodeId)> = sources.into_iter().zip(dests).collect();
        let pus = net.place_pus(0.0, 0.0, layout.side);
        let s = net.scenario(nodes, pus, &pairs);
        s.validate()?;
        return Ok(s);
    }
    Err(ScenarioError::single(format!(
        "no connected layout with median degree in [{}, {}] after {} attempts",
        layout.min_median_degree, layout.max_median_degree, layout.max_attempts
    )))
}

fn distinct_destinations<R: Rng>(sources: &[NodeId], ids: &[NodeId], rng: &mut R) -> Option<Vec<NodeId>> {
    let mut pool = ids.to_vec();
    pool.shuffle(rng);
    let mut out = Vec::new();
    for s in sources {
        let pos = pool.iter().position(|d| d != s)?;
        out.push(pool.remove(pos));
    }
    Some(out)
}

/// Neighbour lists, in node order.
pub fn adjacency(nodes: &[NodeSpec], range: f64) -> BTreeMap<NodeId, Vec<NodeId>> {
    nodes
        .iter()
        .map(|a| {
            let ns = nodes
                .iter()
                .filter(|b| b.id != a.id && a.position.distance(&b.position) <= range)
                .map(|b| b.id)
                .collect();
            (a.id, ns)
        })
        .collect()
}

pub fn connected(adj: &BTreeMap<NodeId, Vec<NodeId>>) -> bool {
    let Some(&start) = adj.keys().next() else {
        return true;
    };
    hop_counts(adj, start).len() == adj.len()
}

pub fn median_degree(adj: &BTreeMap<NodeId, Vec<NodeId>>) -> f64 {
    let mut d: Vec<usize> = adj.values().map(Vec::len).collect();
    d.sort_unstable();
    match d.len() {
        0 => 0.0,
        n if n % 2 == 1 => d[n / 2] as f64,
        n => (d[n / 2 - 1] + d[n / 2]) as f64 / 2.0,
    }
}

fn hop_counts(adj: &BTreeMap<NodeId, Vec<NodeId>>, from: NodeId) -> BTreeMap<NodeId, usize> {
    let mut dist = BTreeMap::from([(from, 0)]);
    let mut q = VecDeque::from([from]);
    while let Some(u) = q.pop_front() {
        let du = dist[&u];
        for &v in &adj[&u] {
            if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(v) {
                e.insert(du + 1);
                q.push_back(v);
            }
        }
    }
    dist
}

/// Next hop per (node, destination) on hop-count shortest paths; among
/// equal choices the lowest neighbour id wins.
pub fn shortest_path_routes(adj: &BTreeMap<NodeId, Vec<NodeId>>) -> BTreeMap<NodeId, BTreeMap<NodeId, NodeId>> {
    let mut routes: BTreeMap<NodeId, BTreeMap<NodeId, NodeId>> = adj.keys().map(|&n| (n, BTreeMap::new())).collect();
    for &dest in adj.keys() {
        let dist = hop_counts(adj, dest);
        for (&u, &du) in &dist {
            if u == dest {
                continue;
            }
            let next = adj[&u]
                .iter()
                .filter(|v| dist.get(v) == Some(&(du - 1)))
                .min()
                .copied()
                .expect("a node on a shortest path has a closer neighbour");
            routes.get_mut(&u).expect("known node").insert(dest, next);
        }
    }
    routes
}

/// Channel with the least total activity of PUs covering either endpoint;
/// ties go to the lowest channel.
pub fn link_channel(a: &Position, b: &Position, channels: u8, pus: &[PuSpec]) -> ChannelId {
    let load = |c: u8| -> f64 {
        pus.iter()
            .filter(|p| {
                p.channel == ChannelId(c) && (p.position.distance(a) <= p.radius || p.position.distance(b) <= p.radius)
            })
            .map(|p| p.lambda)
            .sum()
    };
    let best = (0..channels.max(1))
        .min_by(|x, y| load(*x).total_cmp(&load(*y)).then(x.cmp(y)))
        .unwrap_or(0);
    ChannelId(best)
}
