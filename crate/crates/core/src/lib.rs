//! Peer-to-peer relational query service: a SQL subset engine, the per-peer
//! query table, a one-hop overlay, TTL-bounded best-effort merging and a
//! deterministic simulator that drives many peers in one process.
//!
//! The crate is `no_std` and needs only `alloc`; file formats, the oracle and
//! the command line live in the `idss` crate.

#![no_std]

extern crate alloc;

pub mod merge;
pub mod overlay;
pub mod peer;
pub mod query_state;
pub mod sim;
pub mod sql;
pub mod storage;
pub mod value;

pub use value::{ColumnType, Value};
