use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("numeric domain violation in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown or invalid config keys: {}", .0.join(", "))]
    Schema(Vec<String>),
    #[error("degenerate signal: ROI {roi} has zero variance")]
    DegenerateSignal { roi: usize },
    #[error("split error: {0}")]
    Split(String),
    #[error("unsupported Renyi order alpha = {0}")]
    UnsupportedOrder(f64),
    #[error("AUC undefined: labels contain a single class")]
    SingleClass,
    #[error("non-finite loss at {phase} epoch {epoch}: {detail}")]
    NonFinite {
        phase: &'static str,
        epoch: usize,
        detail: String,
    },
    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Domain { .. } => "domain",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Schema(_) => "schema",
            Error::DegenerateSignal { .. } => "degenerate_signal",
            Error::Split(_) => "split",
            Error::UnsupportedOrder(_) => "unsupported_order",
            Error::SingleClass => "single_class",
            Error::NonFinite { .. } => "non_finite",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
