use std::path::PathBuf;

/// Errors raised by the estimators, the benchmark harness and the CLI.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty data: {0}")]
    EmptyData(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("covariance is singular: smallest eigenvalue {min_eigenvalue:e} after ridge")]
    SingularCovariance { min_eigenvalue: f64 },

    #[error("linear system is numerically singular after ridge {ridge:e}")]
    SingularSystem { ridge: f64 },

    #[error("refinement system for slice {slice} is singular")]
    RefinementSingular { slice: usize },

    #[error("degenerate slicing: dividing points {0:?} are not strictly increasing")]
    DegenerateSlicing(Vec<f64>),

    #[error("brute-force oracle supports p <= 2, got p = {0}")]
    OracleTooLarge(usize),

    #[error("distance variance is zero: {0} is constant")]
    ZeroDistanceVariance(&'static str),

    #[error("rank-deficient basis in {0}")]
    RankDeficient(&'static str),

    #[error("invalid labels: {0}")]
    InvalidLabels(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("replicate {replicate} failed: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Process exit code used by the CLI: 2 for invalid configuration or
    /// input, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::EmptyData(_)
            | Error::DimensionMismatch { .. }
            | Error::InvalidLabels(_)
            | Error::InvalidConfig(_)
            | Error::OracleTooLarge(_)
            | Error::Io { .. }
            | Error::Parse { .. } => 2,
            Error::NonFinite(_)
            | Error::SingularCovariance { .. }
            | Error::SingularSystem { .. }
            | Error::RefinementSingular { .. }
            | Error::DegenerateSlicing(_)
            | Error::ZeroDistanceVariance(_)
            | Error::RankDeficient(_) => 3,
            Error::Replicate { source, .. } => source.exit_code(),
        }
    }

    /// Stable identifier of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyData(_) => "EmptyData",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NonFinite(_) => "NonFinite",
            Error::SingularCovariance { .. } => "SingularCovariance",
            Error::SingularSystem { .. } => "SingularSystem",
            Error::RefinementSingular { .. } => "RefinementSingular",
            Error::DegenerateSlicing(_) => "DegenerateSlicing",
            Error::OracleTooLarge(_) => "OracleTooLarge",
            Error::ZeroDistanceVariance(_) => "ZeroDistanceVariance",
            Error::RankDeficient(_) => "RankDeficient",
            Error::InvalidLabels(_) => "InvalidLabels",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Io { .. } => "Io",
            Error::Parse { .. } => "Parse",
            Error::Replicate { source, .. } => source.kind(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
