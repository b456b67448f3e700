use respnet_autodiff::TensorError;
use respnet_eval::EvalError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("slice count {slices} exceeds positional capacity {capacity}")]
    Capacity { slices: usize, capacity: usize },
    #[error("corrupt header in {context}: {reason}")]
    CorruptHeader { context: String, reason: String },
    #[error("truncated payload in {context}: expected {expected} bytes, found {found}")]
    Truncated {
        context: String,
        expected: usize,
        found: usize,
    },
    #[error("shape mismatch in {context}: {reason}")]
    ShapeMismatch { context: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
