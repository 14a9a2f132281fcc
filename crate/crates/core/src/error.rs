//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("derivative order {requested} exceeds availability {available}")]
    DerivativeOrder { requested: usize, available: usize },

    #[error("point {point:?} outside valid region: {reason}")]
    OutOfDomain { point: [f64; 3], reason: String },

    #[error("metric not positive definite at {point:?}")]
    NotPositiveDefinite { point: [f64; 3] },

    #[error("field has no decay annotation; improper integral refused")]
    UnboundedTail,

    #[error("quadrature error budget exceeded: {0}")]
    QuadratureBudget(String),

    #[error("flux sequence not decaying along the radius grid")]
    FluxNotDecaying,

    #[error("gauge residual above tolerance: {0}")]
    GaugeResidual(String),

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("insufficient decay for transform: {0}")]
    NotSquareIntegrable(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("grid format: {0}")]
    GridFormat(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
