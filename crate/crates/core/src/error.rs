use thiserror::Error;

pub type Result<T> = std::result::Result<T, IcpwError>;

#[derive(Debug, Error)]
pub enum IcpwError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at data row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("treatment code {code} at data row {row} is outside 0..={max_level}")]
    TreatmentRange {
        row: usize,
        code: i64,
        max_level: u32,
    },

    #[error("input contains no data rows")]
    EmptyData,

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("no cluster survives the positivity filter ({dropped} clusters dropped)")]
    NotEstimable { dropped: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate cluster: {0}")]
    Degenerate(String),

    #[error("enumeration size {size} exceeds cap {cap}")]
    SizeCap { size: usize, cap: usize },

    #[error("dynamic-programming state space {states} exceeds cap {cap}")]
    StateCap { states: usize, cap: usize },

    #[error("model not identified: {0}")]
    NotIdentified(String),

    #[error("separation detected: {0}")]
    Separation(String),

    #[error("optimizer did not converge: {0}")]
    NoConvergence(String),

    #[error("singular matrix (condition number {condition:.3e}); weakest direction {direction:?}")]
    Singular { condition: f64, direction: Vec<f64> },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("bootstrap unreliable: {failed} of {total} replicates failed")]
    BootstrapUnreliable { failed: usize, total: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl IcpwError {
    /// Stable machine-readable identifier, used by the CLI diagnostics stream.
    pub fn code(&self) -> &'static str {
        match self {
            IcpwError::Schema(_) => "schema",
            IcpwError::Parse { .. } => "parse",
            IcpwError::TreatmentRange { .. } => "treatment_range",
            IcpwError::EmptyData => "empty_data",
            IcpwError::InvalidData(_) => "invalid_data",
            IcpwError::NotEstimable { .. } => "not_estimable",
            IcpwError::Domain(_) => "domain",
            IcpwError::Degenerate(_) => "degenerate",
            IcpwError::SizeCap { .. } => "size_cap",
            IcpwError::StateCap { .. } => "state_cap",
            IcpwError::NotIdentified(_) => "not_identified",
            IcpwError::Separation(_) => "separation",
            IcpwError::NoConvergence(_) => "no_convergence",
            IcpwError::Singular { .. } => "singular",
            IcpwError::Numerical(_) => "numerical",
            IcpwError::BootstrapUnreliable { .. } => "bootstrap_unreliable",
            IcpwError::Unsupported(_) => "unsupported",
            IcpwError::Io(_) => "io",
            IcpwError::Csv(_) => "csv",
            IcpwError::Json(_) => "json",
        }
    }
}
