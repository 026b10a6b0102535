use thiserror::Error;

use crate::types::{NodeId, PacketId};

/// Caller passed arguments outside an operation's domain.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum UsageError {
    #[error("xor_combine needs at least one payload")]
    EmptyXor,
    #[error("an encoding needs at least one member")]
    EmptyEncoding,
    #[error("packet {0} appears twice in one encoding")]
    DuplicateMember(PacketId),
    #[error("two members of one encoding share next hop {0}")]
    SharedNextHop(NodeId),
    #[error("{what} must be non-negative, got {value}")]
    Negative { what: &'static str, value: f64 },
    #[error("exact clique oracle refuses graphs above {limit} vertices (got {got})")]
    OracleTooLarge { limit: usize, got: usize },
    #[error("unknown figure family `{0}` (expected rate, channels, pus, activity or random)")]
    UnknownFamily(String),
    #[error("family {family} needs a sweep over {needs}, the summary has {found}")]
    FamilyMismatch {
        family: &'static str,
        needs: &'static str,
        found: &'static str,
    },
}

/// Invalid configuration value.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("rate must be positive and finite, got {0}")]
    NonPositiveRate(f64),
    #[error("{0}")]
    Invalid(String),
}
