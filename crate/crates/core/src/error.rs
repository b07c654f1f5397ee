use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("token id {id} out of vocabulary of size {size}")]
    TokenOutOfVocabulary { id: usize, size: usize },
    #[error("sequence of length {len} exceeds context {context}")]
    SequenceTooLong { len: usize, context: usize },
    #[error("vocabulary overflow: {needed} types needed, capacity {capacity}")]
    VocabularyOverflow { needed: usize, capacity: usize },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("missing component: {0}")]
    MissingComponent(String),
    #[error("resampling exhausted after {0} attempts")]
    ResampleExhausted(usize),
}

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
