use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ConfigError;
use crate::node::{Mode, ProtocolParams};
use crate::pu::DEFAULT_PU_RADIUS;
use crate::sim::{
    build_random_topology, build_star_topology, LinkLoss, NetworkParams, RandomLayout, Scenario, ScenarioError, Timers,
};
use crate::types::DEFAULT_PACKET_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Star,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub kind: TopologyKind,
    pub leaves: usize,
    pub leaf_distance: f64,
    pub random: RandomLayout,
    pub radio_range: f64,
    pub link_loss: LinkLoss,
    pub duration: f64,
    pub warmup_fraction: f64,
    pub carry_payloads: bool,
    /// Write a JSON-lines event trace next to each cell.
    pub trace: bool,
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection {
            kind: TopologyKind::Star,
            leaves: 4,
            leaf_distance: 200.0,
            random: RandomLayout::default(),
            radio_range: 250.0,
            link_loss: LinkLoss::default(),
            duration: 60.0,
            warmup_fraction: 0.1,
            carry_payloads: false,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub count: u8,
    pub bitrate_bps: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            count: 3,
            bitrate_bps: ProtocolParams::default().bitrate_bps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PuSection {
    pub count: usize,
    pub lambda: f64,
    /// Defaults to `lambda`.
    pub mu: Option<f64>,
    pub radius: f64,
}

impl Default for PuSection {
    fn default() -> Self {
        PuSection {
            count: 3,
            lambda: 0.5,
            mu: None,
            radius: DEFAULT_PU_RADIUS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub rate_kbps: f64,
    pub packet_bytes: u32,
    pub synchronized: bool,
}

impl Default for FlowSection {
    fn default() -> Self {
        FlowSection {
            rate_kbps: 32.0,
            packet_bytes: DEFAULT_PACKET_BYTES,
            synchronized: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    DataRateKbps,
    Channels,
    PuCount,
    Lambda,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::DataRateKbps => "data_rate_kbps",
            SweepParameter::Channels => "channels",
            SweepParameter::PuCount => "pu_count",
            SweepParameter::Lambda => "lambda",
        }
    }

    /// Range used when `enforce_ranges` is on.
    pub fn range(self) -> (f64, f64) {
        match self {
            SweepParameter::DataRateKbps => (4.0, 200.0),
            SweepParameter::Channels => (2.0, 7.0),
            SweepParameter::PuCount => (0.0, 4.0),
            SweepParameter::Lambda => (0.25, 20.0),
        }
    }

    fn integral(self) -> bool {
        matches!(self, SweepParameter::Channels | SweepParameter::PuCount)
    }
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// `None` runs the base configuration once per repetition and mode.
    pub parameter: Option<SweepParameter>,
    pub values: Vec<f64>,
    pub repetitions: u32,
    pub modes: Vec<Mode>,
    pub base_seed: u64,
    pub enforce_ranges: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            parameter: None,
            values: Vec::new(),
            repetitions: 5,
            modes: Mode::ALL.to_vec(),
            base_seed: 1,
            enforce_ranges: true,
        }
    }
}

impl SweepSpec {
    /// Seed of repetition `rep`. Every sweep value and mode reuses the same
    /// seeds, so cells are paired.
    pub fn seed(&self, rep: u32) -> u64 {
        self.base_seed.wrapping_add(rep as u64)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repetitions).map(|r| self.seed(r)).collect()
    }

    /// The x-values of the sweep, or a single `None`.
    pub fn points(&self) -> Vec<Option<f64>> {
        match self.parameter {
            Some(_) => self.values.iter().map(|&v| Some(v)).collect(),
            None => vec![None],
        }
    }
}

/// One experiment: a base scenario shape plus a sweep over it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: TopologySection,
    pub channels: ChannelSection,
    pub pus: PuSection,
    pub flows: FlowSection,
    pub punch: ProtocolParams,
    pub timers: Timers,
    pub sweep: SweepSpec,
}

/// Protocol fields that other sections own, with the key that sets them.
const SHADOWED: &[(&str, &str)] = &[
    ("mode", "sweep.modes"),
    ("bitrate_bps", "channels.bitrate_bps"),
    ("packet_bytes", "flows.packet_bytes"),
];

impl ExperimentConfig {
    /// Parses a JSON document, applies `key.path=value` overrides and
    /// validates the result.
    pub fn from_json_str(text: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| ConfigError::Invalid(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        if let Some(punch) = doc.get("punch").and_then(Value::as_object) {
            for (key, home) in SHADOWED {
                if punch.contains_key(*key) {
                    return Err(ConfigError::Invalid(format!("punch.{key} is set through {home}")));
                }
            }
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(doc).map_err(|e| ConfigError::Invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text, overrides)
    }

    pub fn to_json(&self) -> String {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        if let Some(punch) = doc.get_mut("punch").and_then(Value::as_object_mut) {
            for (key, _) in SHADOWED {
                punch.remove(*key);
            }
        }
        serde_json::to_string_pretty(&doc).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Vec::new();
        let s = &self.sweep;
        if s.repetitions == 0 {
            v.push("sweep.repetitions must be at least 1".to_string());
        }
        if s.modes.is_empty() {
            v.push("sweep.modes must not be empty".to_string());
        }
        let mut modes = s.modes.clone();
        modes.sort();
        modes.dedup();
        if modes.len() != s.modes.len() {
            v.push("sweep.modes lists a mode twice".to_string());
        }
        match s.parameter {
            Some(p) => {
                if s.values.is_empty() {
                    v.push(format!("sweep over {p} has no values"));
                }
                let (lo, hi) = p.range();
                for &x in &s.values {
                    if !x.is_finite() {
                        v.push(format!("sweep value {x} is not finite"));
                    } else if p.integral() && x.fract() != 0.0 {
                        v.push(format!("{p} takes whole numbers, got {x}"));
                    } else if s.enforce_ranges && !(lo..=hi).contains(&x) {
                        v.push(format!("{p} value {x} outside [{lo}, {hi}]"));
                    }
                }
            }
            None if !s.values.is_empty() => v.push("sweep.values given without sweep.parameter".to_string()),
            None => {}
        }
        if !v.is_empty() {
            return Err(ConfigError::Invalid(v.join("; ")));
        }
        // Build every distinct scenario shape once so topology errors show
        // up before any run starts.
        for x in s.points() {
            for seed in s.seeds() {
                self.scenario(x, seed, s.modes[0])
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
        }
        Ok(())
    }

    fn network(&self, x: Option<f64>, seed: u64, mode: Mode) -> NetworkParams {
        let mut net = NetworkParams {
            channels: self.channels.count,
            pu_count: self.pus.count,
            lambda: self.pus.lambda,
            mu: self.pus.mu,
            pu_radius: self.pus.radius,
            rate_bps: self.flows.rate_kbps * 1000.0,
            packet_bytes: self.flows.packet_bytes,
            radio_range: self.topology.radio_range,
            link_loss: self.topology.link_loss,
            duration: self.topology.duration,
            warmup_fraction: self.topology.warmup_fraction,
            seed,
            synchronized_flows: self.flows.synchronized,
            protocol: ProtocolParams {
                mode,
                bitrate_bps: self.channels.bitrate_bps,
                ..self.punch.clone()
            },
            timers: self.timers,
            carry_payloads: self.topology.carry_payloads,
            trace: self.topology.trace,
        };
        if let (Some(p), Some(x)) = (self.sweep.parameter, x) {
            match p {
                SweepParameter::DataRateKbps => net.rate_bps = x * 1000.0,
                SweepParameter::Channels => net.channels = x as u8,
                SweepParameter::PuCount => net.pu_count = x as usize,
                SweepParameter::Lambda => net.lambda = x,
            }
        }
        net
    }

    /// The scenario of one cell.
    pub fn scenario(&self, x: Option<f64>, seed: u64, mode: Mode) -> Result<Scenario, ScenarioError> {
        let net = self.network(x, seed, mode);
        match self.topology.kind {
            TopologyKind::Star => build_star_topology(self.topology.leaves, self.topology.leaf_distance, &net),
            TopologyKind::Random => build_random_topology(&self.topology.random, &net),
        }
    }
}

/// Sets `a.b.c=value` inside a JSON document. The value is parsed as JSON
/// and falls back to a plain string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Invalid(format!("override `{assignment}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::Invalid(format!(
            "override path `{path}` has an empty segment"
        )));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut cur = doc;
    for (i, k) in keys.iter().enumerate() {
        let Value::Object(map) = cur else {
            return Err(ConfigError::Invalid(format!(
                "override `{path}`: `{}` is not an object",
                keys[..i].join(".")
            )));
        };
        if i + 1 == keys.len() {
            map.insert(k.to_string(), value);
            return Ok(());
        }
        cur = map
            .entry(k.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("path has at least one segment")
}
