use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Grid construction rejected: ratios off-grid, nonpositive step, etc.
    #[error("grid: {0}")]
    Grid(String),

    /// Dimension or grid mismatch between values that must agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// A declared model constant failed its probe check (Lipschitz, growth,
    /// ellipticity, or sign condition).
    #[error("model contract violated: {0}")]
    ModelContract(String),

    /// Non-finite value or failed factorization inside a numeric kernel.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Deterministic integration left the sanity bound before the horizon.
    #[error("solution blow-up at t = {t}: |x| = {norm}")]
    BlowUp { t: f64, norm: f64 },

    /// Orbit detection could not certify convergence to a cycle or point.
    #[error("detection failure: {0}")]
    Detection(String),

    /// Optimizer exhausted iterations on every restart; carries the best
    /// value and gradient sup-norm reached so callers can still inspect it.
    #[error("no convergence: best value {value}, gradient sup-norm {grad_norm}")]
    Convergence { value: f64, grad_norm: f64 },

    /// Too many censored trials for the mean to be meaningful.
    #[error("unusable estimate: censored fraction {censored} exceeds 0.5")]
    UnusableEstimate { censored: f64 },

    #[error("expression: {0}")]
    Expression(String),
}
