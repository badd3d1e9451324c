use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid dimensions {dims:?}: {reason}")]
    InvalidDims { dims: Vec<usize>, reason: String },

    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("inverse DFT left an imaginary residue of {residue:e} (allowed {bound:e})")]
    ImaginaryResidue { residue: f64, bound: f64 },

    #[error("scale count {requested} is infeasible for this grid; maximum is {max}")]
    TooManyScales { requested: usize, max: usize },

    #[error("wedge layout at scale {scale} is too fine for the grid: {reason}")]
    WedgeTooFine { scale: usize, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("coefficient set is missing band {0}")]
    MissingBand(String),

    #[error("non-finite value encountered at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
