//! Geometric corpus curation toolkit.
//!
//! The pipeline treats data selection as manifold approximation: embed a
//! corpus on the unit sphere, cluster it at the intrinsic resolution found
//! by rank-stability analysis, score clusters geometrically, mine
//! sub-clusters with structural and cohesion gates, and realize a curated
//! subset under a token budget. Small instances can be checked against an
//! exact optimal-transport oracle.

pub mod budget;
pub mod cluster;
pub mod corpus;
pub mod error;
pub mod features;
pub mod miner;
pub mod pipeline;
pub mod resolution;
pub mod scorer;
pub mod seed;
pub mod synth;
pub mod transport;

pub use budget::BudgetVector;
pub use cluster::ClusterModel;
pub use corpus::Corpus;
pub use error::{Error, Result};
pub use features::{ClusterFeatures, ConsensusWeights, GeometricScores};
pub use miner::{MinerConfig, SelectionPlan, SubClusterRecord};
pub use pipeline::{AblationMode, PipelineConfig};
pub use resolution::{SelectKOptions, SoftBridge, StabilityProfile};
pub use scorer::{ProbeRating, Scorer};
pub use synth::SynthSpec;
pub use transport::{DecompositionReport, EmpiricalMeasure};
