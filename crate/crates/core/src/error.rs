use thiserror::Error;

/// Errors raised by the library. The CLI maps [`PlateError::exit_code`] to its process status.
#[derive(Debug, Error)]
pub enum PlateError {
    #[error("argument error: {0}")]
    Argument(String),
    #[error("domain error: parameter {value} outside [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("singular map at ({xi}, {eta}): det J = {det:e}")]
    SingularMap { xi: f64, eta: f64, det: f64 },
    #[error("assembly error in patch {patch}, cell {cell}: {msg}")]
    Assembly { patch: usize, cell: usize, msg: String },
    #[error("model error: {0}")]
    Model(String),
    #[error("coupling error: {0}")]
    Coupling(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("tracking error: {0}")]
    Tracking(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
    #[error("model file syntax error: {0}")]
    Syntax(String),
    #[error("model file validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl PlateError {
    /// 1 for input and validation problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PlateError::Numerical(_)
            | PlateError::Tracking(_)
            | PlateError::SingularMap { .. }
            | PlateError::Internal(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, PlateError>;
