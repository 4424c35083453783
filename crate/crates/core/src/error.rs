use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("could not place {requested} disjoint obstacles within {attempts} attempts")]
    SamplingBudgetExceeded { requested: usize, attempts: usize },

    #[error("operation requires an ellipse obstacle")]
    WrongKind,

    #[error("hit {hit} has no other hit on obstacle {obstacle} in the same scan")]
    InsufficientNeighbors { hit: usize, obstacle: usize },

    #[error("checkpoint format mismatch: {0}")]
    FormatMismatch(String),

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("Λ⁻¹-norm of the basis vector is {norm:e}, below the gradient guard")]
    NearSingularNorm { norm: f64 },

    #[error("task produced no surface hits")]
    EmptyTask,

    #[error("non-finite meta-loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("buffer capacity of {cap} rows reached")]
    CapacityExceeded { cap: usize },

    #[error("CBF row {row} has zero input gain and its constant side is violated (h = {h:e})")]
    DegenerateRow { row: usize, h: f64 },

    #[error("GP kernel matrix is ill-conditioned: {0}")]
    IllConditioned(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("failed to write artifact {path}: {source}")]
    ArtifactWriteFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag used in the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::SamplingBudgetExceeded { .. } => "SamplingBudgetExceeded",
            Error::WrongKind => "WrongKind",
            Error::InsufficientNeighbors { .. } => "InsufficientNeighbors",
            Error::FormatMismatch(_) => "FormatMismatch",
            Error::NumericalBreakdown(_) => "NumericalBreakdown",
            Error::DomainError(_) => "DomainError",
            Error::NearSingularNorm { .. } => "NearSingularNorm",
            Error::EmptyTask => "EmptyTask",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::CapacityExceeded { .. } => "CapacityExceeded",
            Error::DegenerateRow { .. } => "DegenerateRow",
            Error::IllConditioned(_) => "IllConditioned",
            Error::ConfigInvalid(_) => "ConfigInvalid",
            Error::ArtifactWriteFailure { .. } => "ArtifactWriteFailure",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}
