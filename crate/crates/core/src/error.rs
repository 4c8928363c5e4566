use thiserror::Error;

pub type Result<T> = std::result::Result<T, GammError>;

#[derive(Debug, Error)]
pub enum GammError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at data row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("no usable rows remain after dropping missing values")]
    EmptyData,

    #[error("column '{0}' is constant; cannot rescale")]
    DegenerateScale(String),

    #[error("domain error at row {row}: {msg}")]
    Domain { row: usize, msg: String },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("covariate value {value} outside spline range [{lo}, {hi}]")]
    Extrapolation { value: f64, lo: f64, hi: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("model specification error: {0}")]
    Spec(String),

    #[error("ordering error: {0}")]
    Ordering(String),

    #[error("unknown level '{level}' for factor '{factor}'")]
    Level { factor: String, level: String },

    #[error("no such term or column: {0}")]
    Lookup(String),

    #[error("models are not nested: {0}")]
    Nesting(String),

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("oracle requires balanced groups: {0}")]
    Balance(String),

    #[error("series too short: {0}")]
    Length(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
