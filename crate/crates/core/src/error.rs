use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("expected {expected} values for a {count}x{dim} matrix, got {actual}")]
    ShapeMismatch {
        count: usize,
        dim: usize,
        expected: usize,
        actual: usize,
    },
    #[error("embedding set must have at least one row and one column")]
    Empty,
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("row {0} has zero norm")]
    ZeroNorm(usize),
    #[error("row {row} has norm {norm}, expected unit norm")]
    NotUnitNorm { row: usize, norm: f64 },
    #[error("embedding set is not normalized")]
    Unnormalized,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("row count mismatch: {0} vs {1}")]
    CountMismatch(usize, usize),
    #[error("k = {k} out of range, valid range is 1..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("requested size {size} exceeds the available pool of {available}")]
    SizeExceedsPool { size: usize, available: usize },
    #[error("values must be strictly ascending")]
    NotAscending,
    #[error("gallery contains query index {0}")]
    QueryInGallery(usize),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("row {0} has no group id")]
    MissingGroup(usize),
    #[error("row {0} has no class label")]
    MissingLabel(usize),
    #[error("classes with fewer than {required} available members: {classes:?}")]
    ClassesTooSmall {
        required: usize,
        /// (class index, available members)
        classes: Vec<(u32, usize)>,
    },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
