//! Inference of time-varying functional connectivity from sparse per-node
//! event logs.
//!
//! The pipeline: ingest event series ([`events`]), slice them into windows
//! and score node pairs by their lag co-occurrence structure ([`scoring`]),
//! evolve per-pair edge probabilities and fit the dynamics parameters
//! ([`model`]), and threshold into per-window topologies. A synthetic
//! generator with ground truth ([`synth`]), a node-level accuracy measure
//! ([`eval`]) and a classical correlation baseline ([`baseline`]) support
//! benchmarking.
//!
//! Data-parallel sections run on rayon when the `parallel` feature (default)
//! is enabled and fall back to sequential loops otherwise; results are
//! identical either way.

pub mod baseline;
pub mod eval;
pub mod events;
pub mod model;
mod par;
pub mod scoring;
pub mod synth;

pub use events::{EventError, EventLog, EventSeries, LogFormat, NodePair, NodeRef, WindowSpec};
pub use model::{FitConfig, ModelParams, TopologySnapshot};
pub use synth::{GroundTruth, SyntheticConfig};
