use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("area {0} has no neighbours")]
    IsolatedArea(usize),
    #[error("id {id} out of range (expected < {bound})")]
    InvalidId { id: usize, bound: usize },
    #[error("self-loop on area {0}")]
    SelfLoop(usize),
    #[error("precision matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("membership {0} has no nonzero weight")]
    EmptyRow(usize),
    #[error("negative weight {weight} for membership {membership}, area {area}")]
    NegativeWeight {
        membership: usize,
        area: usize,
        weight: f64,
    },
    #[error("weights of membership {row} sum to {sum}, expected 1")]
    RowSumViolation { row: usize, sum: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("offset evaluates to zero")]
    ZeroOffset,
    #[error("covariate column {0} is constant")]
    ConstantColumn(usize),
    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("{name} = {value} is outside its domain")]
    OutOfDomain { name: &'static str, value: f64 },
    #[error("log density is not finite at initialization after {0} attempts")]
    NonFiniteDensity(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("all draws are identical")]
    DegenerateDraws,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("{path}: row {row}: {message}")]
    Parse {
        path: String,
        row: usize,
        message: String,
    },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    /// Whether the error comes from invalid input data rather than numerics.
    pub fn is_data_error(&self) -> bool {
        !matches!(
            self,
            Error::NotPositiveDefinite
                | Error::NonFiniteDensity(_)
                | Error::DegenerateDraws
                | Error::RankDeficient
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
