//! Distance and hop-wise structure encodings for node classification.
//!
//! The crate covers the whole pipeline:
//!
//! - [`graph`]: CSR storage with directed and undirected views, ego-nets.
//! - [`structure`], [`distance`]: per-node structural indicators of r-hop
//!   ego-nets and distribution statistics of hop distances.
//! - [`features`]: feature matrices, their binary cache format, batch extraction.
//! - [`encoder`]: per-block linear encoders with layer norms, summed.
//! - [`model`]: GAT and AGDN layers, training, checkpoints.
//! - [`cs`]: correct-and-smooth post-processing.
//! - [`pipeline`]: the commands behind the `dhse` binary.

pub mod autodiff;
pub mod cs;
pub mod dataset;
pub mod distance;
pub mod encoder;
pub mod error;
pub mod features;
pub mod graph;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod report;
pub mod structure;
pub mod synth;

pub use error::{Error, Result};
pub use features::FeatureMatrix;
pub use graph::{EgoNet, Graph, NodeId};
