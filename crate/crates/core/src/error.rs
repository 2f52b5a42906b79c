use thiserror::Error;

/// Errors raised by the numerical core, the experiment runner and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("SVD of a {rows}x{cols} matrix did not converge after {sweeps} sweeps (condition estimate {condition:.3e})")]
    SvdNoConvergence {
        rows: usize,
        cols: usize,
        sweeps: usize,
        condition: f64,
    },

    #[error("matrix {rows}x{cols} contains non-finite entries")]
    NonFinite { rows: usize, cols: usize },

    #[error("matrix must be nonempty (got {rows}x{cols})")]
    Empty { rows: usize, cols: usize },

    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not a valid density matrix: {0}")]
    InvalidState(String),

    #[error("not a valid POVM: {0}")]
    InvalidPovm(String),

    #[error("Gram operator is rank deficient (smallest eigenvalue {min_eigenvalue:.3e}, floor {floor:.3e})")]
    RankDeficientGram { min_eigenvalue: f64, floor: f64 },

    #[error("degenerate normalization: leading coordinate {0:.3e} is too close to zero")]
    DegenerateNormalization(f64),

    #[error("{failed} of {trials} trials failed to produce an estimate")]
    TooManyFailures { failed: usize, trials: usize },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the CLI: 1 for configuration and I/O
    /// problems, 2 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Io(_) | Error::Json(_) | Error::InvalidArgument(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
