use thiserror::Error;

use crate::data::Group;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed row at line {line}: {message}")]
    MalformedRow { line: usize, message: String },

    #[error(
        "surrogate observability violated at line {line}: surrogate {observed} but follow-up time {time} {relation} t0 = {t0}"
    )]
    SurrogateObservabilityViolation {
        line: usize,
        time: f64,
        t0: f64,
        observed: &'static str,
        relation: &'static str,
    },

    #[error("non-positive follow-up time {time} at line {line}")]
    NonPositiveTime { line: usize, time: f64 },

    #[error("non-positive surrogate value {value} at line {line} (use --exp-surrogate for real-valued markers)")]
    NonPositiveSurrogate { line: usize, value: f64 },

    #[error("arm {0} is empty or too small")]
    EmptyArm(Group),

    #[error("invalid study: {0}")]
    InvalidStudy(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input")]
    EmptyInput,

    #[error("censoring support exhausted in arm {arm}: censoring survival W^C({time}) = 0, time lies beyond the identifiable range")]
    CensoringSupportExhausted { arm: Group, time: f64 },

    #[error("degenerate surrogate: transformed surrogate values have zero spread")]
    DegenerateSurrogate,

    #[error("empty kernel-weighted risk set at s = {s}")]
    EmptyRiskSet { s: f64 },

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("too few valid perturbation draws: {valid} (need at least {required})")]
    TooFewDraws { valid: usize, required: usize },

    #[error("{failed} of {total} perturbation draws failed (more than 2%); first failure: {first}")]
    TooManyFailedDraws {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("{failed} of {total} replicates failed (more than 2%); first failure: {first}")]
    TooManyFailedReplicates {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("grid point {0} lies outside the observed surrogate support")]
    GridOutsideSupport(f64),

    #[error("covariates required but the study has none")]
    MissingCovariates,

    #[error("unknown covariate column `{0}`")]
    UnknownCovariate(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the input data or configuration rather than
    /// by the estimation itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MalformedRow { .. }
                | Error::SurrogateObservabilityViolation { .. }
                | Error::NonPositiveTime { .. }
                | Error::NonPositiveSurrogate { .. }
                | Error::EmptyArm(_)
                | Error::InvalidStudy(_)
                | Error::InvalidParameter(_)
                | Error::EmptyInput
                | Error::GridOutsideSupport(_)
                | Error::MissingCovariates
                | Error::UnknownCovariate(_)
                | Error::Config(_)
                | Error::Csv(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
