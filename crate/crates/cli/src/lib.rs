//! Library surface of the `sae` command: configuration merging, CSV
//! ingestion and output formatting. The binary in `main.rs` wires these to
//! the engine.

pub mod config;
pub mod ingest;
pub mod output;
