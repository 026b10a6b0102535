//! PUNCH: primary-user-aware XOR network coding for multi-hop cognitive
//! radio networks, with a deterministic discrete-event simulator and an
//! experiment harness.

pub mod coding;
pub mod error;
pub mod experiments;
pub mod node;
pub mod pu;
pub mod sim;
pub mod types;
pub mod wire;

pub use error::{ConfigError, UsageError};
pub use types::*;
