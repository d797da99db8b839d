use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{0}` has zero variance")]
    ConstantColumn(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("singular value decomposition did not converge")]
    DecompositionFailure,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("column index {index} out of range for {len} columns")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),

    #[error("vertex sets must be pairwise disjoint")]
    OverlappingSets,

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("search budget of {0} subsets exceeded")]
    SearchBudgetExceeded(usize),

    #[error("structural system (I - A) is numerically singular")]
    SingularSystem,

    #[error("variance explained by the parents of `{vertex}` is {value}, must be below 1")]
    ExplainedVarianceExceedsOne { vertex: String, value: f64 },

    #[error("invalid SCM: {0}")]
    InvalidScm(String),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("coordinate descent did not converge within {0} sweeps")]
    MaxIterationsExceeded(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parameter grid is empty")]
    EmptyGrid,

    #[error("cannot split {n} observations into {k} folds")]
    FoldTooSmall { n: usize, k: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid config: {0}")]
    ConfigInvalid(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("CSV row {row}, column {column}: {message}")]
    Csv {
        row: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse failure classes, used for CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::DecompositionFailure
            | Error::SingularSystem
            | Error::SingularDesign(_)
            | Error::MaxIterationsExceeded(_)
            | Error::ExplainedVarianceExceedsOne { .. } => ErrorClass::Numerical,
            Error::ConstantColumn(_)
            | Error::NonFinite(_)
            | Error::Csv { .. }
            | Error::Io(_)
            | Error::EmptyInput
            | Error::FoldTooSmall { .. } => ErrorClass::Data,
            _ => ErrorClass::Usage,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        }
    }
}
