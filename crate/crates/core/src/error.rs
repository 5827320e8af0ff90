use thiserror::Error;

#[derive(Debug, Error)]
pub enum DsbmError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unsupported size: {what} = {size} exceeds cap {cap}")]
    UnsupportedSize {
        what: &'static str,
        size: f64,
        cap: f64,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("class {class} collapsed (mass {mass:.3e})")]
    DegenerateClass { class: usize, mass: f64 },
    #[error("estimation failed after {attempts} attempts: {reason}")]
    EstimationFailed { attempts: usize, reason: String },
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("unknown initialisation strategy `{0}`")]
    UnknownStrategy(String),
    #[error("degenerate regression grid: {0}")]
    DegenerateGrid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DsbmError>;
