use thiserror::Error;

/// Errors raised by the numerical modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fractional order {0} outside the admissible range")]
    InvalidOrder(f64),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("potential is not admissible: {0}")]
    NotAdmissible(String),

    #[error("spectral parameter {lambda} within {gap:e} of eigenvalue {index} ({eigenvalue})")]
    SpectralCollision {
        lambda: String,
        index: usize,
        eigenvalue: f64,
        gap: f64,
    },

    #[error("eigenvalue {index} is not simple (gap {gap:e})")]
    DegenerateEigenvalue { index: usize, gap: f64 },

    #[error("eigensolver residual too large: max relative residual {residual:e} at mode {index}")]
    EigenSolver { index: usize, residual: f64 },

    #[error("limit did not converge: residual {residual:e} above tolerance {tol:e}")]
    NoConvergence { residual: f64, tol: f64 },

    #[error("line search failed at iteration {iteration}: no damping decreased the objective")]
    LineSearchFailure { iteration: usize },

    #[error("observability calibration failed: required constant {required} exceeds cap {cap}")]
    ObservabilityFailure { required: f64, cap: f64 },

    #[error("i/o failure at {path}: {message}")]
    Io { path: String, message: String },

    #[error("cache rejected: {0}")]
    Cache(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid_grid",
            Error::InvalidOrder(_) => "invalid_order",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::InvalidInput(_) => "invalid_input",
            Error::NotAdmissible(_) => "not_admissible",
            Error::SpectralCollision { .. } => "spectral_collision",
            Error::DegenerateEigenvalue { .. } => "degenerate_eigenvalue",
            Error::EigenSolver { .. } => "eigen_solver",
            Error::NoConvergence { .. } => "no_convergence",
            Error::LineSearchFailure { .. } => "line_search_failure",
            Error::ObservabilityFailure { .. } => "observability_failure",
            Error::Io { .. } => "io",
            Error::Cache(_) => "cache",
            Error::Config(_) => "config",
        }
    }

    pub(crate) fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
