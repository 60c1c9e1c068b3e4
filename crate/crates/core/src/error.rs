use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point {point:?}{} is not covered by any ball", index.map(|i| format!(" (index {i})")).unwrap_or_default())]
    UncoveredPoint { index: Option<usize>, point: Vec<f64> },

    #[error("k-means produced an empty cluster after {retries} reseeds")]
    DegenerateClusters { retries: usize },

    #[error("ball {ball} has no mass inside the domain")]
    ZeroMassBall { ball: usize },

    #[error("rejection sampling stalled in ball {ball}: {accepted} accepted out of {attempts} proposals")]
    RejectionStall { ball: usize, accepted: usize, attempts: usize },

    #[error("density is not positive at sample {index} (p = {value})")]
    NonPositivePdf { index: usize, value: f64 },

    #[error("problem kind mismatch: {0}")]
    KindMismatch(String),

    #[error("point {point:?} is not on the constrained boundary")]
    NotOnBoundary { point: Vec<f64> },

    #[error("singular discrete system: {0}")]
    SingularSystem(String),

    #[error("quadrature did not converge at (x = {x}, t = {t}): error estimate {error_estimate:e}")]
    QuadratureFailure { x: f64, t: f64, error_estimate: f64 },

    #[error("reference field has zero norm")]
    ZeroReferenceNorm,

    #[error("linear solver stalled after {iterations} iterations (relative residual {residual:e})")]
    SolverStall { iterations: usize, residual: f64 },

    #[error("damped normal matrix is not numerically positive definite")]
    NotPositiveDefinite,

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("training aborted at iteration {iteration}: {reason}")]
    TrainingAborted { iteration: usize, reason: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
