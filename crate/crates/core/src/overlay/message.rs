use alloc::string::String;
use alloc::vec::Vec;

use super::PeerId;
use crate::merge::Partial;
use crate::query_state::Uqi;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    Query,
    Result,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Query => "query",
            MessageKind::Result => "result",
        }
    }
}

/// Intermediate result plus the peers whose local data it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultPayload {
    pub data: Partial,
    /// Sorted, duplicate-free.
    pub contributors: Vec<PeerId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MessageBody {
    QueryBroadcast {
        uqi: Uqi,
        sql: String,
        ttl: u64,
        sender_key: PeerId,
        initiator: PeerId,
    },
    ResultReturn {
        uqi: Uqi,
        payload: ResultPayload,
        origin: PeerId,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlayMessage {
    pub src: PeerId,
    pub dst: PeerId,
    pub send_time: u64,
    pub body: MessageBody,
}

impl OverlayMessage {
    pub fn kind(&self) -> MessageKind {
        match self.body {
            MessageBody::QueryBroadcast { .. } => MessageKind::Query,
            MessageBody::ResultReturn { .. } => MessageKind::Result,
        }
    }

    pub fn uqi(&self) -> Uqi {
        match &self.body {
            MessageBody::QueryBroadcast { uqi, .. } | MessageBody::ResultReturn { uqi, .. } => *uqi,
        }
    }
}
