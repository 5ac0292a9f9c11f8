use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GmcError {
    #[error("{what}: positive-definiteness certificate failed (min eigenvalue {min_eigenvalue:.3e}, max {max_eigenvalue:.3e})")]
    CertificationFailed {
        what: String,
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("{what}: radial quadrature did not converge (discrepancy {discrepancy:.3e})")]
    QuadratureUnstable { what: String, discrepancy: f64 },

    #[error("scale {level} is unresolvable on a grid of side {side}; use a finer grid or fewer levels")]
    ScaleUnresolvable { level: u32, side: usize },

    #[error("level {level}: clamped negative spectral mass {clamped:.3e} exceeds budget {budget:.1e}")]
    ClampBudgetExceeded { level: u32, clamped: f64, budget: f64 },

    #[error("gamma = {gamma} is outside the subcritical range (0, {upper:.6}) for d = {dim}")]
    GammaOutOfRange { gamma: f64, dim: usize, upper: f64 },

    #[error("level mismatch: expected {expected}, got {got}")]
    LevelMismatch { expected: u32, got: u32 },

    #[error("only {usable} usable shells, at least 3 are needed for a regression")]
    InsufficientShells { usable: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("artifact schema version {found} does not match supported version {expected}")]
    SchemaMismatch { found: u32, expected: u32 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, GmcError>;

impl GmcError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GmcError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        GmcError::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
