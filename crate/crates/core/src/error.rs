use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    // input / data validation
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("missing value at row {row}, column {column}")]
    MissingValue { row: usize, column: String },
    #[error("dates are not strictly increasing at row {row}")]
    NonMonotonicDates { row: usize },
    #[error("non-positive price {value} at row {row}, column {column}")]
    NonPositivePrice {
        row: usize,
        column: String,
        value: f64,
    },
    #[error("daily return {value} at row {row}, column {column} violates |r| < 1")]
    ReturnOutOfBounds {
        row: usize,
        column: String,
        value: f64,
    },
    #[error("duplicate asset identifier {0}")]
    DuplicateAsset(String),
    #[error("weights sum to {0}, expected 1")]
    WeightSumError(f64),
    #[error("negative weight {weight} for {asset}")]
    NegativeWeight { asset: String, weight: f64 },
    #[error("unknown asset {0}")]
    UnknownAsset(String),
    #[error("panel is empty")]
    EmptyPanel,
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("series too short: need {needed}, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("insufficient history: need {needed} observations, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("insufficient window: need {needed} observations, got {got}")]
    InsufficientWindow { needed: usize, got: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("column {0} is constant")]
    ConstantColumn(usize),
    #[error("input out of range: {0}")]
    OutOfRangeInput(String),
    #[error("tail level {0} must lie in (0, 0.5)")]
    BadTailLevel(f64),
    #[error("confidence level {0} must lie in (0, 1)")]
    BadAlpha(f64),
    #[error("sample too small: need {needed}, got {got}")]
    SampleTooSmall { needed: usize, got: usize },
    #[error("fewer than three assets in cross-section ({0})")]
    TooFewAssets(usize),
    #[error("no group has at least five stocks")]
    NoEligibleGroups,
    #[error("regime labels do not overlap the result dates")]
    NoOverlap,
    #[error("need at least two strategies, got {0}")]
    TooFewStrategies(usize),
    #[error("result too short: need {needed} days, got {got}")]
    ResultTooShort { needed: usize, got: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid configuration: {0}")]
    Config(String),

    // numerical
    #[error("optimizer did not converge: {0}")]
    NonConvergence(String),
    #[error("correlation matrix is singular or undefined")]
    SingularCorrelation,
    #[error("zero volatility")]
    ZeroVol,
    #[error("weights are degenerate: fewer than two positive weight-vol products")]
    DegenerateWeights,
    #[error("matrix is not positive semidefinite (min eigenvalue {0})")]
    NotPsd(f64),
    #[error("matrix is not positive definite")]
    NotPd,
    #[error("regressors are collinear")]
    CollinearRegressors,
    #[error("linear program infeasible: {0}")]
    InfeasibleLp(String),
    #[error("numerical underflow in filter at t = {0}")]
    NumericalUnderflow(usize),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Config(_) | InvalidParams(_) | BadAlpha(_) | BadTailLevel(_) | WeightSumError(_)
            | NegativeWeight { .. } | UnknownAsset(_) => ErrorClass::Config,
            NonConvergence(_) | SingularCorrelation | ZeroVol | DegenerateWeights | NotPsd(_)
            | NotPd | CollinearRegressors | InfeasibleLp(_) | NumericalUnderflow(_)
            | InvalidModel(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn too_short(needed: usize, got: usize) -> Self {
        Error::SeriesTooShort { needed, got }
    }
}
