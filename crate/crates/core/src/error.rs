use thiserror::Error;

/// Errors produced anywhere in the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error at tape node {node}: {what}")]
    Domain { node: usize, what: &'static str },

    #[error("node {0} is not on this tape")]
    UnknownNode(usize),

    #[error("gradient output must be a 1x1 scalar node, got {rows}x{cols}")]
    NonScalarOutput { rows: usize, cols: usize },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid task: {0}")]
    Task(String),

    #[error("missing derivative: {0}")]
    MissingDerivative(String),

    #[error("point {point:?} is not on the boundary of the task domain")]
    OffBoundary { point: Vec<f64> },

    #[error("degenerate triangle: {0}")]
    DegenerateTriangle(String),

    #[error("time stepping failed: {0}")]
    Cfl(String),

    #[error("reference norm is zero")]
    ZeroNorm,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("non-finite gradient at step {step} in block `{block}`")]
    NonFiniteGradient { step: u64, block: String },

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: u64, loss: f64 },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("mismatched series: {0}")]
    Series(String),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
