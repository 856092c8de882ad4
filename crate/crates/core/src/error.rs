use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("rank-deficient system: {0}")]
    RankDeficient(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("iteration diverged at t = {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("fixed-point iteration did not converge within {0} iterations")]
    NonConvergence(usize),

    #[error("no finite fixed point: {0}")]
    NoFixedPoint(String),

    #[error("infinite rate: effective noise variance is zero")]
    InfiniteRate,

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("{}", match .line {
        Some(line) => format!("config error at line {line}: {msg}"),
        None => format!("config error: {msg}"),
    })]
    Config { line: Option<usize>, msg: String },

    #[error("I/O error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Config {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 1 for configuration problems, 2 for runtime failures (divergence,
    /// singular systems, ...), 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidArgument(_) | Error::Unsupported(_) => 1,
            Error::Io { .. } => 3,
            _ => 2,
        }
    }
}
