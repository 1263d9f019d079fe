use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("solvability error: {0}")]
    Solvability(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("kernel singularity: {0}")]
    Singularity(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
    pub(crate) fn geom(msg: impl Into<String>) -> Self {
        Error::Geometry(msg.into())
    }
}
