//! The per-peer QUERY table: identifiers, duplicate detection and the query
//! lifecycle state machine.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use sha2::{Digest, Sha256};

use crate::overlay::PeerId;

/// Universal query identifier: identical for one submission on every peer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Uqi(pub u128);

impl Uqi {
    /// Identifier of phase `phase` of a multi-phase (nested) query.
    pub fn derive(self, phase: u32) -> Uqi {
        let mut h = Sha256::new();
        h.update(b"phase");
        h.update(self.0.to_be_bytes());
        h.update(phase.to_be_bytes());
        Uqi(truncate(&h.finalize()))
    }

    pub fn parse_hex(s: &str) -> Option<Uqi> {
        if s.len() != 32 {
            return None;
        }
        u128::from_str_radix(s, 16).ok().map(Uqi)
    }
}

impl fmt::Display for Uqi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

fn truncate(digest: &[u8]) -> u128 {
    let mut b = [0u8; 16];
    b.copy_from_slice(&digest[..16]);
    u128::from_be_bytes(b)
}

/// Deterministic 128-bit identifier for a submission.
pub fn new_uqi(canonical_sql: &str, initiator: PeerId, counter: u64, seed: u64) -> Uqi {
    let mut h = Sha256::new();
    h.update((canonical_sql.len() as u64).to_be_bytes());
    h.update(canonical_sql.as_bytes());
    h.update(initiator.0.to_be_bytes());
    h.update(counter.to_be_bytes());
    h.update(seed.to_be_bytes());
    Uqi(truncate(&h.finalize()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum State {
    Queued,
    LocallyExecuted,
    Completed,
    SentBack,
    Failed,
}

impl State {
    pub const ALL: [State; 5] =
        [State::Queued, State::LocallyExecuted, State::Completed, State::SentBack, State::Failed];

    pub fn as_str(self) -> &'static str {
        match self {
            State::Queued => "QUEUED",
            State::LocallyExecuted => "LOCALLY_EXECUTED",
            State::Completed => "COMPLETED",
            State::SentBack => "SENT_BACK",
            State::Failed => "FAILED",
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StateError {
    #[error("illegal transition {from} -> {to}")]
    IllegalTransition { from: State, to: State },
    #[error("SENT_BACK is not a state of the initiator")]
    SentBackOnInitiator,
}

/// One row of the QUERY table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRecord {
    pub id_query: u64,
    pub uqi: Uqi,
    pub value: String,
    pub arrival_time: u64,
    /// Milliseconds.
    pub ttl: u64,
    /// Forwarding peer, or [`PeerId::INITIATOR_SENTINEL`] on the initiator.
    pub sender_key: PeerId,
    pub local_exec: bool,
    pub completed: bool,
    pub sent_back: bool,
    pub failed: bool,
}

impl QueryRecord {
    pub fn new(uqi: Uqi, value: String, arrival_time: u64, ttl: u64, sender_key: PeerId) -> Self {
        QueryRecord {
            id_query: 0,
            uqi,
            value,
            arrival_time,
            ttl,
            sender_key,
            local_exec: false,
            completed: false,
            sent_back: false,
            failed: false,
        }
    }

    pub fn is_initiator(&self) -> bool {
        self.sender_key.is_sentinel()
    }

    pub fn state(&self) -> State {
        if self.failed {
            State::Failed
        } else if self.sent_back {
            State::SentBack
        } else if self.completed {
            State::Completed
        } else if self.local_exec {
            State::LocallyExecuted
        } else {
            State::Queued
        }
    }

    fn is_terminal(&self) -> bool {
        match self.state() {
            State::Failed | State::SentBack => true,
            State::Completed => self.is_initiator(),
            _ => false,
        }
    }

    /// Apply one lifecycle edge.
    pub fn transition(&mut self, to: State) -> Result<(), StateError> {
        let from = self.state();
        if to == State::SentBack && self.is_initiator() {
            return Err(StateError::SentBackOnInitiator);
        }
        let legal = match (from, to) {
            (State::Queued, State::LocallyExecuted) => true,
            (State::LocallyExecuted, State::Completed) => true,
            (State::Completed, State::SentBack) => true,
            (_, State::Failed) => !self.is_terminal(),
            _ => false,
        };
        if !legal {
            return Err(StateError::IllegalTransition { from, to });
        }
        match to {
            State::LocallyExecuted => self.local_exec = true,
            State::Completed => self.completed = true,
            State::SentBack => self.sent_back = true,
            State::Failed => self.failed = true,
            State::Queued => unreachable!(),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recorded {
    Inserted,
    Duplicate,
}

/// The QUERY table of one peer. Records are never evicted.
#[derive(Debug, Clone, Default)]
pub struct QueryTable {
    by_uqi: BTreeMap<Uqi, QueryRecord>,
    next_id: u64,
}

impl QueryTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert `record` unless its uqi is already known; assigns `id_query`.
    pub fn record_if_new(&mut self, mut record: QueryRecord) -> Recorded {
        if self.by_uqi.contains_key(&record.uqi) {
            return Recorded::Duplicate;
        }
        self.next_id += 1;
        record.id_query = self.next_id;
        self.by_uqi.insert(record.uqi, record);
        Recorded::Inserted
    }

    pub fn get(&self, uqi: &Uqi) -> Option<&QueryRecord> {
        self.by_uqi.get(uqi)
    }

    pub fn transition(&mut self, uqi: &Uqi, to: State) -> Result<(), StateError> {
        match self.by_uqi.get_mut(uqi) {
            Some(r) => r.transition(to),
            None => Err(StateError::IllegalTransition { from: State::Queued, to }),
        }
    }

    pub fn len(&self) -> usize {
        self.by_uqi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_uqi.is_empty()
    }

    /// Records ordered by local key.
    pub fn records(&self) -> Vec<&QueryRecord> {
        let mut v: Vec<_> = self.by_uqi.values().collect();
        v.sort_by_key(|r| r.id_query);
        v
    }
}
