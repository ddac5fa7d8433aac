use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index out of range: {kind} {index} (size {size})")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        size: usize,
    },

    #[error("negative multiplicity {value} on edge ({worker}, {firm})")]
    NegativeMultiplicity { worker: usize, firm: usize, value: i64 },

    #[error("zero degree for {kind} {index} with zero penalty")]
    ZeroDegree { kind: &'static str, index: usize },

    #[error("operator of size {size} exceeds dense cap {cap}; use power iteration or diagonal probing instead")]
    DenseCapExceeded { size: usize, cap: usize },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("graph is disconnected: {n_components} components ({detail})")]
    Disconnected { n_components: usize, detail: String },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("penalties must be positive for this operation; use ols_fit for zero penalties")]
    ZeroPenalty,

    #[error("clipped edge probability mass {clipped:e} exceeds 0.1% of total mass {total:e}")]
    ExcessiveClipping { clipped: f64, total: f64 },

    #[error("{0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
