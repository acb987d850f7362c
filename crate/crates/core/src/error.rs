use alloc::string::String;

/// Errors raised by the core algorithms.
///
/// Variants carry enough context to name the first offending record, which
/// the command line surfaces verbatim.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid label map: {0}")]
    InvalidLabelMap(String),
    #[error("label map is missing required structure `{0}`")]
    MissingStructure(String),
    #[error("invalid manifest at row {row}: {reason}")]
    InvalidManifest { row: usize, reason: String },
    #[error("invalid feature table: {0}")]
    InvalidTable(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("labels must contain both classes")]
    SingleClass,
    #[error("empty input: {0}")]
    Empty(String),
    #[error("non-finite value for feature `{feature}` in row {row}")]
    NonFinite { feature: String, row: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("ensemble has no recorded node covers")]
    MissingCovers,
    #[error("brute-force Shapley values support at most {max} features, got {got}")]
    TooManyFeatures { max: usize, got: usize },
    #[error("degenerate reference for `{0}`: MAD is zero")]
    DegenerateReference(String),
    #[error("invalid phantom: {0}")]
    InvalidPhantom(String),
    #[error("training failed for grid combination {index}: {reason}")]
    GridCombination { index: usize, reason: String },
}

pub type Result<T> = core::result::Result<T, Error>;
