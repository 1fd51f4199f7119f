use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("negative time {0} requested on a non-invertible flow")]
    NonInvertible(f64),
    #[error("integration left the bounding box at t = {at}")]
    Diverged { at: f64 },
    #[error("point is outside the potential's domain")]
    OutsideDomain,
    #[error("slice (C)_t is empty at t = {0}")]
    EmptySlice(f64),
    #[error("pressure fit is degenerate: {0}")]
    DegenerateFit(String),
    #[error("segment is not in the decomposition's domain")]
    NotInDomain,
    #[error("no shadowing certificate found after {attempts} attempts (inconclusive)")]
    NoCertificate { attempts: usize },
    #[error("no connecting word from symbol {from} to symbol {to} within {max_len} symbols")]
    InfeasibleGap { from: u8, to: u8, max_len: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid backend: {0}")]
    Backend(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
