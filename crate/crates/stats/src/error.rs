use thiserror::Error;

pub type Result<T> = std::result::Result<T, StatsError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("formula error: {0}")]
    Formula(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{column}` must be {expected}")]
    WrongColumnType { column: String, expected: &'static str },
    #[error("column `{column}` has {found} rows, expected {expected}")]
    LengthMismatch {
        column: String,
        expected: usize,
        found: usize,
    },
    #[error("column `{0}` contains a missing or non-finite value")]
    MissingValue(String),
    #[error("grouping factor `{factor}` needs at least 2 levels, found {found}")]
    InsufficientLevels { factor: String, found: usize },
    #[error("REML estimation requires the gaussian family")]
    RemlRequiresGaussian,
    #[error("response `{0}` must be binary (0/1)")]
    NonBinaryResponse(String),
    #[error("wrong family for this fitting routine: expected {0}")]
    WrongFamily(&'static str),
    #[error("complete or quasi-complete separation detected (fitted probabilities pinned at 0/1)")]
    SeparationDetected,
    #[error("optimizer did not converge after {0} evaluations")]
    NonConvergence(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("likelihood-ratio statistic is negative beyond tolerance: {0}")]
    NegativeStatistic(f64),
    #[error("all variance components are zero")]
    AllZeroVariance,
    #[error("negative variance supplied: {0}")]
    NegativeVariance(f64),
    #[error("no level `{level}` for factor `{factor}`")]
    MissingLevel { factor: String, level: String },
    #[error("fit has no random slope for factor `{0}`")]
    MissingSlope(String),
    #[error("x is constant; slope undefined")]
    DegenerateX,
    #[error("need at least {needed} observations, found {found}")]
    TooFewObservations { needed: usize, found: usize },
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("need at least two non-empty groups")]
    InsufficientGroups,
    #[error("differences have zero variance")]
    ZeroVariance,
    #[error("degrees of freedom must be at least 1")]
    InvalidDf,
    #[error("empty input")]
    EmptyInput,
}
