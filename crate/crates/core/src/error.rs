use std::path::PathBuf;

/// Errors raised by the modelling, reduction and identification pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("eigensolver did not converge")]
    NoConvergence,
    #[error("singular block: {0}")]
    SingularBlock(String),
    #[error("matrix is not symmetric (max relative asymmetry {0:e})")]
    AsymmetricInput(f64),
    #[error("invalid beam spec: {0}")]
    InvalidSpec(String),
    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("slave stiffness block is singular")]
    SingularSlaveBlock,
    #[error("unknown DOF label `{0}`")]
    UnknownLabel(String),
    #[error("measured label `{0}` is not a master physical DOF")]
    MeasuredModalCoordinate(String),
    #[error("effective stiffness matrix is singular")]
    SingularEffectiveStiffness,
    #[error("unmeasured block of the effective stiffness is singular")]
    SingularUnmeasuredBlock,
    #[error("normal matrix of the Tikhonov problem is singular")]
    SingularNormalMatrix,
    #[error("non-finite measurement at sample {0}")]
    NonFiniteMeasurement(usize),
    #[error("sample interval {found:e} s does not match integrator step {expected:e} s")]
    SampleRateMismatch { expected: f64, found: f64 },
    #[error("invalid regularization grid: {0}")]
    InvalidGrid(String),
    #[error("Kalman filter diverged at sample {0}")]
    DivergedFilter(usize),
    #[error("unknown force profile `{0}`")]
    UnknownProfile(String),
    #[error("invalid frequency band [{lo}, {hi}] Hz")]
    InvalidBand { lo: f64, hi: f64 },
    #[error("signals are not on the same grid: {0}")]
    GridMismatch(String),
    #[error("no spectral bins in [{f0}, {fmax}] Hz")]
    EmptyBand { f0: f64, fmax: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
