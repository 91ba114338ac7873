use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("nonfinite value at layer {layer}: {detail}")]
    NonFinite { layer: usize, detail: String },
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("invalid activation: {0}")]
    InvalidActivation(String),
    #[error("anchor condition failed: {0}")]
    AnchorCondition(String),
    #[error("tolerance unreachable: requested {requested}, best achieved {achieved}: {detail}")]
    ToleranceUnreachable {
        requested: f64,
        achieved: f64,
        detail: String,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("encoding infeasible: {0}")]
    EncodingInfeasible(String),
    #[error("budget infeasible: {0}")]
    BudgetInfeasible(String),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("version mismatch: file has {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
