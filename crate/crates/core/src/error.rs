use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid total in row {row}: {total}")]
    InvalidTotal { row: usize, total: u64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("weight kind {0} has no cap indicator")]
    NotApplicable(&'static str),

    #[error("category {0} is identically zero; its shape parameter is not identifiable")]
    UnidentifiableCategory(usize),

    #[error("singular system: near-null combination {combination}")]
    SingularSystem { combination: String },

    #[error("insufficient totals: no row has m >= {degree} for moment {monomial}")]
    InsufficientTotals { degree: u32, monomial: String },

    #[error("truncation infeasible: acceptance rate {rate:e} over {attempted} probe proposals")]
    InfeasibleTruncation { rate: f64, attempted: u64 },

    #[error("envelope failure: acceptance rate {rate:e}; envelope trace {trace:?}")]
    EnvelopeFailure { rate: f64, trace: Vec<f64> },

    #[error("study failed: {0}")]
    Study(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag for the error category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidDimension(_) => "invalid-dimension",
            Error::InvalidData(_) => "invalid-data",
            Error::InvalidTotal { .. } => "invalid-total",
            Error::InvalidModel(_) => "invalid-model",
            Error::Config(_) => "config",
            Error::NotApplicable(_) => "not-applicable",
            Error::UnidentifiableCategory(_) => "unidentifiable-category",
            Error::SingularSystem { .. } => "singular-system",
            Error::InsufficientTotals { .. } => "insufficient-totals",
            Error::InfeasibleTruncation { .. } => "infeasible-truncation",
            Error::EnvelopeFailure { .. } => "envelope-failure",
            Error::Study(_) => "study-failed",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
