use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible partition at region {path}: {reason}")]
    InfeasiblePartition { path: String, reason: String },

    /// A Cholesky pivot was non-positive (after the single jitter retry).
    #[error("matrix not positive definite at pivot {pivot} ({context})")]
    NotPositiveDefinite { pivot: usize, context: String },

    /// An observation row (or noise covariance entry) couples two finest regions.
    #[error("observation row {row} couples more than one finest region")]
    ObservationCoupling { row: usize },

    #[error("fill outside the multi-resolution pattern: {0}")]
    PatternBreach(String),

    #[error("dense computation refused: n = {n} exceeds the guard of {limit}")]
    DenseGuard { n: usize, limit: usize },

    #[error("unstable discretization: {0}")]
    Unstable(String),

    #[error("all particle weights underflowed to zero; review the proposal distribution")]
    WeightUnderflow,

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

pub(crate) fn ensure_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
