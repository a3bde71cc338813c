use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the library.
///
/// Variants fall into three families that the CLI maps onto exit codes:
/// configuration problems, I/O failures and data-contract violations
/// (see [`Error::kind`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate class name `{0}`")]
    DuplicateName(String),
    #[error("class `{class}` references unknown parent `{parent}`")]
    DanglingParent { class: String, parent: String },
    #[error("invalid hierarchy at `{class}`: {reason}")]
    InvalidHierarchy { class: String, reason: String },
    #[error("{kind} nomenclature must have {expected} classes, found {found}")]
    WrongClassCount {
        kind: String,
        expected: usize,
        found: usize,
    },
    #[error("class `{0}` is not allowed in this nomenclature")]
    ForbiddenClass(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("length mismatch in {what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("malformed question: {0}")]
    MalformedQuestion(String),
    #[error("question has more than two conjunctions")]
    MoreThanTwoConjunctions,
    #[error("need {needed} distinct classes, nomenclature has {available}")]
    NotEnoughClasses { needed: usize, available: usize },

    #[error("config error: {0}")]
    Config(String),
    #[error("data format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse error classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    DataContract,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) => ErrorKind::Config,
            Error::Io(_) => ErrorKind::Io,
            Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => ErrorKind::Io,
            _ => ErrorKind::DataContract,
        }
    }
}
