//! Transaction-graph forensics: chain indexing, multi-input clustering, tag
//! resolution, exchange classification, worklist exploration, relation
//! extraction and C&C signaling oracles.
//!
//! The crate is `no_std` and only needs an allocator. File formats, the CLI
//! and anything touching the clock or the filesystem live in the companion
//! `txgraph` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod chain;
pub mod classifier;
pub mod cluster;
pub mod error;
pub mod evaluation;
pub mod explorer;
pub mod features;
pub mod fixtures;
pub mod oracles;
pub mod relations;
pub mod tags;

pub use chain::{AddrType, ChainStore, IngestOptions, Transaction, TxSlot};
pub use cluster::{ClusterId, ClusterMap};
pub use error::*;
pub use tags::{Category, ResolvedTag, TagDb, TagRecord};
