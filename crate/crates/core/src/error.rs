use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cell {cell} has probability {prob:e} below the 1e-12 floor; coarsen the grid")]
    GridTooFine { cell: usize, prob: f64 },

    #[error("invalid family: {0}")]
    InvalidFamily(String),

    #[error("invalid distribution: {}", .0.join("; "))]
    InvalidDistribution(Vec<String>),

    #[error("sample value {value} lies below the first grid edge {floor}")]
    OutOfSupport { value: f64, floor: f64 },

    #[error("score vectors are not orthonormal in the weighted inner product (max deviation {0:e})")]
    NonOrthonormalScores(f64),

    #[error("reflection is degenerate: the two vectors coincide (inner product {0})")]
    DegenerateReflection(f64),

    #[error("score unavailable: {0}")]
    ScoreUnavailable(String),

    #[error(
        "information matrix is singular or ill-conditioned ({0}); parameters are not locally identifiable on this grid"
    )]
    SingularInformation(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("function and process are defined over different time scales")]
    SpaceMismatch,

    #[error("maximum likelihood estimate not found: {0}")]
    MleNotFound(String),

    #[error("tail beyond cell {0} carries no probability")]
    TailExhausted(usize),

    #[error("regressor covariance at cell {cell} is singular (determinant {det:e})")]
    SingularCovariance { cell: usize, det: f64 },

    #[error("x and y grids differ; colour-blind symmetrization needs a common scale")]
    AsymmetricGrids,

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("null table unreliable: {failures} of {reps} replicates failed")]
    TableUnreliable { failures: usize, reps: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable name, used in JSON error objects.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::GridTooFine { .. } => "GridTooFine",
            Error::InvalidFamily(_) => "InvalidFamily",
            Error::InvalidDistribution(_) => "InvalidDistribution",
            Error::OutOfSupport { .. } => "OutOfSupport",
            Error::NonOrthonormalScores(_) => "NonOrthonormalScores",
            Error::DegenerateReflection(_) => "DegenerateReflection",
            Error::ScoreUnavailable(_) => "ScoreUnavailable",
            Error::SingularInformation(_) => "SingularInformation",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::SpaceMismatch => "SpaceMismatch",
            Error::MleNotFound(_) => "MleNotFound",
            Error::TailExhausted(_) => "TailExhausted",
            Error::SingularCovariance { .. } => "SingularCovariance",
            Error::AsymmetricGrids => "AsymmetricGrids",
            Error::IndexOutOfRange(_) => "IndexOutOfRange",
            Error::TableUnreliable { .. } => "TableUnreliable",
            Error::EmptySample => "EmptySample",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Io(_) => "Io",
        }
    }
}
