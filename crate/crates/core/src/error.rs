use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("row {row} of transition matrix sums to {sum}")]
    NotRowStochastic { row: usize, sum: f64 },

    #[error("transition matrix is reducible")]
    Reducible,

    #[error("transition matrix violates detailed balance by {max_violation:e}")]
    NotReversible { max_violation: f64 },

    #[error("eigensolver did not converge")]
    NoConvergence,

    #[error("no lagged pairs: every trajectory is shorter than or equal to lag {lag}")]
    EmptyDataset { lag: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("instantaneous covariance is not positive definite after regularization")]
    IllConditioned,

    #[error("requested {requested} modes but only {available} are available")]
    TooManyModes { requested: usize, available: usize },

    #[error("correlations must be symmetrized before solving")]
    NotSymmetrized,

    #[error("landmark Gram matrix has no eigenvalue above the cutoff")]
    RankDeficient,

    #[error("requested {requested} landmarks from {available} available points")]
    TooFewPoints { requested: usize, available: usize },

    #[error("training aborted at epoch {epoch}, batch {batch}: loss = {loss}")]
    TrainingAborted { epoch: usize, batch: usize, loss: f64 },

    #[error("zero-norm mode")]
    ZeroNorm,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
