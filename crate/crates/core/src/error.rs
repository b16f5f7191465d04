use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch between {0}")]
    GridMismatch(&'static str),

    #[error("axis {axis} has {len} voxel(s), at least {min} required")]
    DegenerateAxis { axis: usize, len: usize, min: usize },

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("value count {got} does not match voxel count {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value at voxel {0}")]
    NonFinite(usize),

    #[error("label {0} has no declared name")]
    UndeclaredLabel(u32),

    #[error("singular matrix (|det| = {0:e})")]
    Singular(f64),

    #[error("rank-deficient design matrix")]
    RankDeficient,

    #[error("zero variance: {0}")]
    ZeroVariance(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("nifti: {0}")]
    Nifti(String),

    #[error("csv: {0}")]
    Csv(String),

    #[error("missing structure `{0}`")]
    MissingStructure(String),

    #[error("non-finite cost at pyramid level {level}")]
    NonFiniteCost { level: usize },

    #[error("folding persisted after {0} attempts")]
    FoldingPersisted(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
