use thiserror::Error;

/// Errors produced by the recovery pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("factorization failed to converge: {0}")]
    Convergence(String),

    #[error("Gram matrix numerically singular (min/max eigenvalue ratio {ratio:.3e})")]
    SingularGram { ratio: f64 },

    #[error("matrix numerically rank deficient (column {col})")]
    RankDeficient { col: usize },

    #[error("could not place {spikes} spikes with wrap-around gap >= {gap} after {attempts} attempts")]
    InfeasibleSeparation {
        spikes: usize,
        gap: f64,
        attempts: usize,
    },

    #[error("lifted matrix has numerical rank below {expected}")]
    SubspaceDeficient { expected: usize },

    #[error("solver diverged at iteration {iter} (objective {objective:.3e} vs initial {initial:.3e})")]
    Divergence {
        iter: usize,
        objective: f64,
        initial: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in {file} line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 usage/config, 3 numerical failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) => 2,
            Error::Io { .. } | Error::Parse { .. } => 4,
            _ => 3,
        }
    }
}
