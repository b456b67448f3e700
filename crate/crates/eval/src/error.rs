use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metric undefined: cohort contains only class {present}")]
    SingleClass { present: u8 },
    #[error("empty cohort")]
    EmptyCohort,
    #[error("invalid cohort: {0}")]
    InvalidCohort(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
