use serde::{Deserialize, Serialize};

use crate::types::{ChannelId, NativePacket, NodeId, SimTime};
use crate::wire::PunchHeader;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    /// Native or encoded data. `link_dest` is the unicast MAC destination.
    Data { link_dest: NodeId },
    /// Periodic broadcast reception report carrying the full pool snapshot.
    Report,
}

/// One MAC frame on the air. The PUNCH header is real; MAC and IP headers
/// are accounted for as a fixed byte overhead only.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub sender: NodeId,
    pub channel: ChannelId,
    pub kind: FrameKind,
    pub header: PunchHeader,
    /// Member natives in header order. Receivers only read the member
    /// they manage to decode.
    pub natives: Vec<NativePacket>,
    /// XOR of member payloads, present when the run carries payloads.
    pub payload: Option<Vec<u8>>,
    pub size_bytes: u32,
    pub airtime: f64,
    pub sent_at: SimTime,
}

impl Frame {
    pub fn is_data(&self) -> bool {
        matches!(self.kind, FrameKind::Data { .. })
    }

    pub fn link_dest(&self) -> Option<NodeId> {
        match self.kind {
            FrameKind::Data { link_dest } => Some(link_dest),
            FrameKind::Report => None,
        }
    }

    /// Nodes the frame is addressed to: every member next hop for data,
    /// nobody in particular for reports.
    pub fn intended(&self) -> Vec<NodeId> {
        self.header.xored.iter().map(|(_, hop)| NodeId(*hop)).collect()
    }

    pub fn ends_at(&self) -> SimTime {
        self.sent_at + self.airtime
    }
}

/// Airtime in seconds of `bytes` at `bitrate_bps`.
pub fn airtime(bytes: u32, bitrate_bps: f64) -> f64 {
    bytes as f64 * 8.0 / bitrate_bps
}
