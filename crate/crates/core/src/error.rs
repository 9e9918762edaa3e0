use thiserror::Error;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("dimension mismatch: expected {expected} values, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("entry ({row}, {col}) is negative or non-finite: {value}")]
    InvalidEntry { row: usize, col: usize, value: f32 },
    #[error("column {0} is all zero")]
    ZeroColumn(usize),
    #[error("descriptor matrix must have T >= 2 and N >= 1, got {t}x{n}")]
    EmptyMatrix { t: usize, n: usize },
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum FactorizationError {
    #[error("model order {k} out of range 1..={max}")]
    OrderOutOfRange { k: usize, max: usize },
    #[error("singular value decomposition failed: {0}")]
    SvdFailed(String),
    #[error("input matrix has a negative entry at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid loadings: {0}")]
    InvalidLoadings(String),
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("bit width {0} out of range 1..=16")]
    BitsOutOfRange(u8),
    #[error("entry {value} at ({row}, {col}) outside quantizer range [{lo}, {hi}]")]
    OutOfRange {
        row: usize,
        col: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("truncated blob: needed {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("invalid blob field: {0}")]
    InvalidField(String),
    #[error("column {0} dequantizes to all zeros and cannot be normalized")]
    DegenerateColumn(usize),
}

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("ambient dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("loadings of image {0:?} are rank deficient")]
    RankDeficient(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error("eta must be at least 1")]
    InvalidEta,
    #[error("duplicate image id {0:?}")]
    DuplicateImage(String),
    #[error("inconsistent index entry {0:?}: {1}")]
    InconsistentEntry(String, String),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("alpha {alpha} outside 0..={eta}")]
    AlphaOutOfRange { alpha: usize, eta: usize },
    #[error("eta must be at least 1")]
    InvalidEta,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("server reported status {status}: {message}")]
    Remote { status: u8, message: String },
    #[error("frame of {0} bytes exceeds the size limit")]
    FrameTooLarge(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Factorization(#[from] FactorizationError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("object {0:?} has fewer than two views")]
    SingleView(String),
    #[error("query view {view} missing for object {object:?}")]
    MissingQueryView { object: String, view: usize },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Factorization(#[from] FactorizationError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
