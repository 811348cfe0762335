use thiserror::Error;

/// Errors raised while loading inputs or evaluating the models.
#[derive(Debug, Error)]
pub enum Error {
    #[error("adjacency row {row}: {message}")]
    AdjacencyRow { row: usize, message: String },

    #[error("self-edge on region '{label}' at row {row}")]
    SelfEdge { label: String, row: usize },

    #[error("adjacency graph is disconnected: {components} components (first region of each: {representatives:?})")]
    Disconnected {
        components: usize,
        representatives: Vec<String>,
    },

    #[error("empty adjacency graph")]
    EmptyGraph,

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("singular triangular solve: zero diagonal at {index}")]
    SingularSolve { index: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parameter out of range: {0}")]
    Parameter(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("sampler failed at iteration {iteration}: {message}")]
    Sampler { iteration: usize, message: String },

    #[error("zero-variance input: {0}")]
    ZeroVariance(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
