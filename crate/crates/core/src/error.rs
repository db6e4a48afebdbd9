//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed metadata record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("duplicate sample id {id} at line {line}")]
    DuplicateId { id: u64, line: usize },

    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("record count mismatch: {meta} metadata records vs {emb} embedding rows")]
    RecordCountMismatch { meta: usize, emb: usize },

    #[error("zero-norm embedding at row {row}")]
    ZeroNormEmbedding { row: usize },

    #[error("invalid embedding file {path}: {reason}")]
    InvalidEmbeddingFile { path: PathBuf, reason: String },

    #[error("empty subset: fraction {fraction} of {n} samples rounds to zero")]
    EmptySubset { fraction: f64, n: usize },

    #[error("k = {k} exceeds sample count {n}")]
    TooManyClusters { k: usize, n: usize },

    #[error("unknown cluster id {id} (model has {k} clusters)")]
    UnknownCluster { id: usize, k: usize },

    #[error("spectral weights require at least 5 clusters, got {k}")]
    TooFewClustersForConsensus { k: usize },

    #[error("power iteration failed to converge after {iters} iterations")]
    PowerIterationDiverged { iters: usize },

    #[error("non-positive {feature} value {value} cannot be log-stabilized")]
    NonPositiveFeature { feature: &'static str, value: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("rank correlation needs at least 2 entries, got {n}")]
    TooFewForRank { n: usize },

    #[error("empty score vector")]
    EmptyScores,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("measure has {n} points, exact transport is capped at {cap}")]
    MeasureTooLarge { n: usize, cap: usize },

    #[error("invalid empirical measure: {0}")]
    InvalidMeasure(String),

    #[error("transport solver failed to converge after {iters} augmentations")]
    TransportDiverged { iters: usize },

    #[error("cluster {cluster} carries mass {mass} but no selected points")]
    UnrepresentedCluster { cluster: usize, mass: f64 },

    #[error("decomposition bound violated: e_s = {e_s} > 2*t1 + 2*t2 = {bound}")]
    BoundViolated { e_s: f64, bound: f64 },

    #[error("cannot place {k} quasi-orthogonal directions in dimension {dim}")]
    DirectionPlacement { k: usize, dim: usize },

    #[error("scorer error: {0}")]
    Scorer(#[from] crate::scorer::ScorerError),

    #[error("token budget {budget} exceeds corpus total of {available} tokens")]
    BudgetExceedsCorpus { budget: u64, available: u64 },

    #[error("token budget {budget} is below the longest single sample ({max_len} tokens)")]
    BudgetBelowMaxSample { budget: u64, max_len: u64 },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("output directory is locked by another run: {0}")]
    OutputLocked(PathBuf),

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tag an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
