use thiserror::Error;

/// Errors raised across the synthesis toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("eigenvalue iteration did not converge for a {0}x{0} matrix")]
    EigenFailure(usize),

    #[error("state matrix is not Hurwitz (max real part {max_real:.3e})")]
    NonHurwitz { max_real: f64 },

    #[error("nonzero feedthrough (norm {norm:.3e}): the H2 norm is not defined")]
    NonzeroFeedthrough { norm: f64 },

    #[error("Hamiltonian bisection could not bracket the H-infinity norm: {0}")]
    Bracket(String),

    #[error("unknown decision variable {0}")]
    UnknownVariable(String),

    #[error("inequality constraint `{0}` is not symmetric")]
    Asymmetric(String),

    #[error("bilinear term: {0}")]
    Bilinear(String),

    #[error("missing value for variable {0}")]
    MissingValue(String),

    #[error("performance specification is infeasible: {0}")]
    InfeasiblePerformance(String),

    #[error("SDP solve did not reach the requested accuracy: {0}")]
    Numerical(String),

    #[error("Lyapunov variable is numerically singular (condition number {cond:.3e})")]
    SingularLyapunov { cond: f64 },

    #[error("controller reconstruction failed: {0}")]
    ReconstructionFailure(String),

    #[error("verification failed: {0}")]
    VerificationFailed(String),

    #[error("reduced plant is infeasible at threshold ratio {threshold}: {reason}")]
    ReducedInfeasible { threshold: f64, reason: String },

    #[error("simulation diverged at t = {t:.4}")]
    SimulationBlowup { t: f64 },

    #[error("channel {channel}: {source}")]
    Channel { channel: usize, source: Box<Error> },

    #[error("reweighting iteration {iteration}: {source}")]
    Iteration { iteration: usize, source: Box<Error> },

    #[error("io: {0}")]
    Io(String),

    #[error("format: {0}")]
    Format(String),
}

impl Error {
    /// Strips iteration/channel wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Channel { source, .. } | Error::Iteration { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(
            self.root(),
            Error::InfeasiblePerformance(_) | Error::ReducedInfeasible { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
