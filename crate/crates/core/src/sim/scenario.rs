use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::node::ProtocolParams;
use crate::pu::{Position, DEFAULT_PU_RADIUS};
use crate::types::{ChannelId, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub position: Position,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PuSpec {
    pub index: u16,
    pub channel: ChannelId,
    pub position: Position,
    #[serde(default = "default_pu_radius")]
    pub radius: f64,
    pub lambda: f64,
    /// Defaults to `lambda`.
    #[serde(default)]
    pub mu: Option<f64>,
}

fn default_pu_radius() -> f64 {
    DEFAULT_PU_RADIUS
}

impl PuSpec {
    pub fn mu(&self) -> f64 {
        self.mu.unwrap_or(self.lambda)
    }
}

/// Constant bit rate source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub src: NodeId,
    pub dst: NodeId,
    pub rate_bps: f64,
    #[serde(default = "default_packet_bytes")]
    pub packet_bytes: u32,
    /// First packet time. Drawn uniformly within one interval when absent.
    #[serde(default)]
    pub start: Option<f64>,
}

fn default_packet_bytes() -> u32 {
    crate::types::DEFAULT_PACKET_BYTES
}

impl FlowSpec {
    pub fn interval(&self) -> f64 {
        self.packet_bytes as f64 * 8.0 / self.rate_bps
    }
}

/// Per-link loss probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkLoss {
    Constant {
        p: f64,
    },
    /// `max * (d / range)^2`.
    Distance {
        max: f64,
    },
}

impl Default for LinkLoss {
    fn default() -> Self {
        LinkLoss::Distance { max: 0.2 }
    }
}

impl LinkLoss {
    pub fn probability(&self, distance: f64, range: f64) -> f64 {
        match *self {
            LinkLoss::Constant { p } => p,
            LinkLoss::Distance { max } => max * (distance / range).powi(2),
        }
        .clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timers {
    pub report_period: f64,
    /// Relative jitter on each report period.
    pub report_jitter: f64,
    /// Contention slot before each channel grant.
    pub mac_slot: f64,
    pub sample_interval: f64,
    pub route_refresh: f64,
}

impl Default for Timers {
    fn default() -> Self {
        Timers {
            report_period: 0.5,
            report_jitter: 0.1,
            mac_slot: 0.0005,
            sample_interval: 1.0,
            route_refresh: 5.0,
        }
    }
}

/// Everything one run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub nodes: Vec<NodeSpec>,
    pub radio_range: f64,
    pub channels: u8,
    pub pus: Vec<PuSpec>,
    pub flows: Vec<FlowSpec>,
    #[serde(default)]
    pub link_loss: LinkLoss,
    pub duration: f64,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub protocol: ProtocolParams,
    #[serde(default)]
    pub timers: Timers,
    /// Carry random payload bytes and check every decode against them.
    #[serde(default)]
    pub carry_payloads: bool,
    #[serde(default)]
    pub trace: bool,
}

fn default_warmup() -> f64 {
    0.1
}

impl Scenario {
    pub fn warmup(&self) -> f64 {
        self.duration * self.warmup_fraction
    }

    pub fn position(&self, id: NodeId) -> Option<Position> {
        self.nodes.iter().find(|n| n.id == id).map(|n| n.position)
    }

    /// Collects every violation instead of stopping at the first.
    // Negated comparisons so that NaN fails every check.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut v = Vec::new();
        let ids: BTreeSet<NodeId> = self.nodes.iter().map(|n| n.id).collect();
        if self.nodes.is_empty() {
            v.push("no nodes".to_string());
        }
        if ids.len() != self.nodes.len() {
            v.push("duplicate node ids".to_string());
        }
        if !(self.radio_range > 0.0) {
            v.push(format!("radio_range must be positive, got {}", self.radio_range));
        }
        if self.channels == 0 {
            v.push("at least one channel is required".to_string());
        }
        if !(self.duration > 0.0) {
            v.push(format!("duration must be positive, got {}", self.duration));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            v.push(format!(
                "warmup_fraction must be in [0, 1), got {}",
                self.warmup_fraction
            ));
        }
        let mut pu_ids = BTreeSet::new();
        for pu in &self.pus {
            if !pu_ids.insert(pu.index) {
                v.push(format!("duplicate PU index {}", pu.index));
            }
            if pu.channel.0 >= self.channels {
                v.push(format!(
                    "PU {} on {} but only {} channels",
                    pu.index, pu.channel, self.channels
                ));
            }
            if !(pu.lambda > 0.0 && pu.lambda.is_finite()) || !(pu.mu() > 0.0 && pu.mu().is_finite()) {
                v.push(format!("PU {} rates must be positive", pu.index));
            }
            if !(pu.radius >= 0.0) {
                v.push(format!("PU {} radius must be non-negative", pu.index));
            }
        }
        for (k, f) in self.flows.iter().enumerate() {
            for end in [f.src, f.dst] {
                if !ids.contains(&end) {
                    v.push(format!("flow {k} references unknown node {end}"));
                }
            }
            if f.src == f.dst {
                v.push(format!("flow {k} has the same source and destination"));
            }
            if !(f.rate_bps > 0.0 && f.rate_bps.is_finite()) {
                v.push(format!("flow {k} rate must be positive"));
            }
            if f.packet_bytes == 0 {
                v.push(format!("flow {k} packet size must be positive"));
            }
        }
        match self.link_loss {
            LinkLoss::Constant { p } | LinkLoss::Distance { max: p } if !(0.0..=1.0).contains(&p) => {
                v.push(format!("link loss parameter {p} outside [0, 1]"));
            }
            _ => {}
        }
        let p = &self.protocol;
        if !(0.0..=2.0).contains(&p.theta) {
            v.push(format!("theta must be in [0, 2], got {}", p.theta));
        }
        if p.window == 0 || p.queue_capacity == 0 || p.pool_capacity == 0 {
            v.push("window, queue and pool capacities must be positive".to_string());
        }
        if !(p.bitrate_bps > 0.0) {
            v.push("bitrate must be positive".to_string());
        }
        if !(p.ack_timeout > 0.0) || !(p.pool_ttl > 0.0) || p.coding_hold < 0.0 {
            v.push("ack_timeout and pool_ttl must be positive, coding_hold non-negative".to_string());
        }
        if let crate::node::TauPolicy::Fixed(t) = p.tau {
            if !(t >= 0.0) {
                v.push(format!("tau must be non-negative, got {t}"));
            }
        }
        let t = &self.timers;
        if !(t.report_period > 0.0 && t.mac_slot > 0.0 && t.sample_interval > 0.0 && t.route_refresh > 0.0) {
            v.push("timer periods must be positive".to_string());
        }
        if !(0.0..1.0).contains(&t.report_jitter) {
            v.push("report_jitter must be in [0, 1)".to_string());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError { violations: v })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ScenarioError {
    pub violations: Vec<String>,
}

impl ScenarioError {
    pub fn single(msg: impl Into<String>) -> ScenarioError {
        ScenarioError {
            violations: vec![msg.into()],
        }
    }
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid scenario: {}", self.violations.join("; "))
    }
}
