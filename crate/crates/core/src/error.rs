use std::path::PathBuf;

/// Errors produced across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("trajectory is empty")]
    EmptyTrajectory,

    #[error("training loss needs at least one stability record")]
    EmptyRecords,

    #[error("basin map needs at least one target mode")]
    NoModes,

    #[error("rule `{0}` needs a correction network but none is loaded")]
    NetMissing(&'static str),

    #[error("unknown learning rule `{0}` (expected gradient, one, mof, e2e or strol)")]
    UnknownRule(String),

    #[error("unknown environment `{0}` (expected highway, robot or demo2d)")]
    UnknownEnv(String),

    #[error("malformed weight file at byte {offset}: {message}")]
    WeightFormat { offset: usize, message: String },

    #[error("non-finite loss at epoch {epoch}, sample {sample}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        sample: usize,
        detail: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("port {port} is already in use: {source}")]
    PortBusy {
        port: u16,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
