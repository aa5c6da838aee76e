use thiserror::Error;

use crate::container::ContainerError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid size {0}: must be even and at least 8")]
    InvalidGrid(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown phantom kind `{0}`")]
    UnknownPhantom(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("trajectory sample at radius {radius} exceeds k-space radius {limit}")]
    TrajectoryOutOfRange { radius: f64, limit: f64 },
    #[error("density compensation failed: {0}")]
    DensityVanished(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}
