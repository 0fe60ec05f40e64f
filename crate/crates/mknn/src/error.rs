use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: malformed header: {reason}", path.display())]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("{}: dtype mismatch: found code {found}, only 1 (f32) is supported", path.display())]
    DtypeMismatch { path: PathBuf, found: u8 },
    #[error("{}: truncated payload: header promises {expected} bytes, file holds {found}", path.display())]
    TruncatedPayload {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("{}: {extra} trailing bytes after the payload", path.display())]
    TrailingBytes { path: PathBuf, extra: u64 },
    #[error("{}: dimension mismatch: file has dim {found}, expected {expected}", path.display())]
    DimensionMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Data {
        path: PathBuf,
        #[source]
        source: mknn_core::Error,
    },
    #[error(transparent)]
    Core(#[from] mknn_core::Error),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn data(path: &Path) -> impl FnOnce(mknn_core::Error) -> Error + '_ {
    move |source| Error::Data {
        path: path.to_path_buf(),
        source,
    }
}
