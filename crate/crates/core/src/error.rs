use thiserror::Error;

use crate::space::ValidationReport;

/// Errors raised by the library. Report-style checks return their verdicts
/// as data; these are reserved for inputs an operation cannot work with.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no admissible chain between points {from} and {to} at resolution {k}")]
    EmptyChainSet { from: usize, to: usize, k: usize },

    #[error("time {t} is not on the grid of resolution {k}")]
    OffGridTime { t: f64, k: usize },

    #[error("chains have different resolutions ({0} vs {1})")]
    ResolutionMismatch(usize, usize),

    #[error("measures live on spaces of different sizes ({0} vs {1})")]
    SizeMismatch(usize, usize),

    #[error("invalid probability measure: {0}")]
    InvalidMeasure(String),

    #[error("transport solver failure: {0}")]
    SolverFailure(String),

    #[error("brute-force oracle limited to supports of size {limit}, got {got}")]
    SizeLimit { limit: usize, got: usize },

    #[error("restriction selects zero mass")]
    ZeroMassRestriction,

    #[error("curvature K = {0} > 0 is not supported here")]
    UnsupportedCurvature(f64),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("g is not an upper gradient: chain {nodes:?} has |du| = {lhs} > {rhs}")]
    NotAnUpperGradient { nodes: Vec<usize>, lhs: f64, rhs: f64 },

    #[error("chain {nodes:?} leaves the ball around {center}")]
    InsideBallViolation { center: usize, nodes: Vec<usize> },

    #[error("no grid interval satisfies the interval condition at k = {k}; need k >= {min_k}")]
    GridTooCoarse { k: usize, min_k: usize },

    #[error("parse error at {position}: {message}")]
    Parse { position: String, message: String },

    #[error("metric axioms violated: {0}")]
    Metric(ValidationReport),

    #[error("graph is disconnected: point {0} is unreachable")]
    DisconnectedGraph(String),

    #[error("unknown example space `{0}`")]
    UnknownExample(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
