use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit count mismatch: {0} vs {1}")]
    QubitMismatch(usize, usize),

    #[error("dimension {dim} exceeds the cap {cap} ({what})")]
    ResourceCap { what: String, dim: usize, cap: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("series diverges: residual ratio {ratio:.3e} at depth {depth}")]
    Divergence { depth: usize, ratio: f64 },

    #[error("decay exhausted: new mu = {0}")]
    DecayExhausted(f64),

    #[error("flow breakdown at level {0}")]
    FlowBreakdown(usize),

    #[error("gap condition violated at s = {s}: gap {gap:.3e} < 1/2")]
    GapViolation { s: f64, gap: f64 },

    #[error("unitarity drift {0:.3e}")]
    NonUnitary(f64),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("block-diagonality violated: |QWP| = {0:.3e}")]
    NotBlockDiagonal(f64),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn is_resource(&self) -> bool {
        matches!(self, Error::ResourceCap { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
