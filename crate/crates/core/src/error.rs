use thiserror::Error;

/// Errors raised anywhere in the fitting pipeline.
#[derive(Debug, Error)]
pub enum LpsmcError {
    #[error("time {t} outside of the spline domain [0, {t_upper}]")]
    Domain { t: f64, t_upper: f64 },

    #[error("time at index {index} is outside of the spline domain: {source}")]
    DomainAt {
        index: usize,
        #[source]
        source: Box<LpsmcError>,
    },

    #[error("penalty order {order} must satisfy 1 <= order < {num_basis}")]
    InvalidOrder { order: usize, num_basis: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("non-finite log-likelihood contribution at unit {index}")]
    NonFinite { index: usize },

    #[error("Newton-Raphson did not converge after {iterations} iterations (gradient max-norm {grad_norm:e})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        last: Vec<f64>,
    },

    #[error("objective evaluation failed at v = {v}: {source}")]
    Objective {
        v: f64,
        #[source]
        source: Box<LpsmcError>,
    },

    #[error("fit failed during {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<LpsmcError>,
    },

    #[error("coordinate {0} is held fixed by the last-coefficient constraint")]
    ConstrainedCoordinate(usize),

    #[error("coordinate {index} out of range for a latent vector of dimension {dim}")]
    CoordinateOutOfRange { index: usize, dim: usize },

    #[error("transform singularity: estimated probability is numerically {0}; report the degenerate interval {{{0}}}")]
    TransformSingularity(f64),

    #[error("{failed} of {total} replications failed (more than 10%)")]
    StudyFailure { failed: usize, total: usize },

    #[error("csv error at row {row}, column '{column}': {message}")]
    Csv {
        row: usize,
        column: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    CsvRaw(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LpsmcError {
    /// True for errors that stem from numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            LpsmcError::NonFinite { .. }
            | LpsmcError::NonConvergence { .. }
            | LpsmcError::TransformSingularity(_)
            | LpsmcError::StudyFailure { .. } => true,
            LpsmcError::Objective { source, .. }
            | LpsmcError::Stage { source, .. }
            | LpsmcError::DomainAt { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, LpsmcError>;
