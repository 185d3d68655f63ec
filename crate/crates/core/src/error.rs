use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    Validation,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed range entry {entry:?}: {reason}")]
    RangeSyntax { entry: String, reason: String },

    #[error("range entry {entry:?} has lower bound U+{lo:04X} above upper bound U+{hi:04X}")]
    RangeOrder { entry: String, lo: u32, hi: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("token id {id} is assigned to both {first:?} and {second:?}")]
    DuplicateTokenId {
        id: u32,
        first: String,
        second: String,
    },

    #[error("unsupported tokenizer: {0}")]
    UnsupportedTokenizer(String),

    #[error("token {id}: surface {surface:?} contains U+{codepoint:04X}, which is not in the byte-level alphabet")]
    SurfaceDecode {
        id: u32,
        surface: String,
        codepoint: u32,
    },

    #[error("invalid sampling configuration: {0}")]
    SamplingConfig(String),

    #[error("exhaustive enumeration requires {count} combinations, above the cap of {cap}")]
    EnumerationCap { count: u128, cap: u64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid smoothing parameters: {0}")]
    SmoothingParams(String),

    #[error("{path}: {source}")]
    Container {
        path: PathBuf,
        #[source]
        source: ContainerError,
    },

    #[error("no output-head tensor found; searched {searched:?}")]
    HeadNotFound { searched: Vec<String> },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error(
        "output head {tensor:?} is tied to the input embedding; scaling it would also change input \
         representations. Re-run with untie consent to write a separate head tensor"
    )]
    TiedEmbeddings { tensor: String },

    #[error("{marker} exists: the input checkpoint was already edited (re-applying scales rows by S^2); use force to override")]
    AlreadyEdited { marker: PathBuf },

    #[error("integrity check failed for {path}: copied bytes differ from source")]
    Integrity { path: PathBuf },

    #[error("output directory must differ from the model directory ({0})")]
    SameDirectory(PathBuf),
}

/// Structured parse failures for named-tensor containers.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContainerError {
    #[error("file too short for the 8-byte header length prefix")]
    MissingHeaderLength,
    #[error("header overruns file: header claims {header_len} bytes, {available} available")]
    HeaderOverrun { header_len: u64, available: u64 },
    #[error("header is not valid JSON: {0}")]
    InvalidHeader(String),
    #[error("tensor {name:?}: unknown dtype {dtype:?}")]
    UnknownDtype { name: String, dtype: String },
    #[error("tensor {name:?}: data offsets [{begin}, {end}) fall outside the {data_len}-byte data region")]
    OffsetsOutOfBounds {
        name: String,
        begin: u64,
        end: u64,
        data_len: u64,
    },
    #[error("tensors {first:?} and {second:?} have overlapping data offsets")]
    OverlappingOffsets { first: String, second: String },
    #[error("tensor {name:?}: shape {shape:?} needs {expected} bytes, buffer holds {actual}")]
    SizeMismatch {
        name: String,
        shape: Vec<usize>,
        expected: u64,
        actual: u64,
    },
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::RangeSyntax { .. }
            | Error::RangeOrder { .. }
            | Error::SamplingConfig(_)
            | Error::SmoothingParams(_)
            | Error::EnumerationCap { .. }
            | Error::SameDirectory(_) => ErrorKind::Config,
            Error::Io { .. } | Error::Json { .. } => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
