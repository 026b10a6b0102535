//! Deterministic discrete-event simulator: scenarios, topologies, the
//! abstract MAC, the event loop and the metrics ledger.

mod engine;
pub mod mac;
pub mod metrics;
pub mod rng;
pub mod scenario;
pub mod topology;

pub use engine::{run, RunOutput, Simulation};
pub use mac::{frame_outcome, mac_grant_policy, ReceiverLink};
pub use metrics::{compute_metrics, Gains, MetricsLedger, RunSummary, Sample};
pub use scenario::{FlowSpec, LinkLoss, NodeSpec, PuSpec, Scenario, ScenarioError, Timers};
pub use topology::{build_random_topology, build_star_topology, NetworkParams, RandomLayout};
