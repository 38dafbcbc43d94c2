//! File formats, run manifests and the `txgraph` command line on top of
//! `txgraph-core`.

pub mod chainio;
pub mod cli;
pub mod clock;
pub mod error;
pub mod graphio;
pub mod jsonio;
pub mod manifest;
pub mod model;
pub mod oracle_registry;
pub mod parallel;
pub mod tables;

pub use error::DataError;
pub use txgraph_core as core;
