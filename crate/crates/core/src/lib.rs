//! Leveled, frequency-annotated graphical model for massive hierarchical data.
//!
//! A [`Model`] holds one node per outcome of each level and counts how often
//! consecutive outcomes co-occur along training paths. On top of the counts:
//!
//! - [`scoring`] predicts a parent from a child (`f / T`) and ranks
//!   same-level nodes by a log-space co-occurrence similarity;
//! - [`ingest`] parses path files and user search logs and trains sharded
//!   partial models that merge into exactly the single-pass result;
//! - [`persist`] reads and writes a canonical, versioned text format.

pub mod eval;
pub mod graph;
pub mod ingest;
pub mod persist;
pub mod scoring;
pub mod stats;
pub mod synth;

pub use graph::{
    merge, Edge, Model, ModelError, ModelSchema, NodeRef, NodeStat, Observation, RootCounting, Violation,
    FORMAT_VERSION, ROOT_LABEL,
};
pub use ingest::{IngestConfig, IngestError, InputFormat};
pub use scoring::{ScoreError, ScoredResult};
pub use stats::StatsReport;
