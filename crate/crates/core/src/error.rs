use thiserror::Error;

/// Errors raised by the solvers and the file loaders.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or violated precondition.
    #[error("input error: {0}")]
    Input(String),

    /// Malformed or invalid measure/dataset file.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// An iterative solver hit its iteration cap.
    #[error("{solver} did not converge after {iterations} iterations (last residual {residual:.3e}, duality gap {gap:.3e})")]
    Convergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        gap: f64,
    },

    /// Problem too large for a dense oracle.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// The free-support solver left the local region too often.
    #[error("rebuild storm: {rebuilds} coreset rebuilds; {hint}")]
    RebuildStorm { rebuilds: usize, hint: String },

    /// The anchor reaches zero cost, so the layered partition is undefined.
    #[error("degenerate partition: anchor has zero cost on the dataset")]
    DegeneratePartition,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable class used by the command-line front end.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Input(_) | Error::Parse { .. } | Error::DegeneratePartition => "input",
            Error::Convergence { .. } | Error::RebuildStorm { .. } => "convergence",
            Error::Capacity(_) => "capacity",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
