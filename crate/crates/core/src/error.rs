use std::path::PathBuf;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0}: backward called without a forward cache")]
    MissingCache(&'static str),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("bounding box {bbox:?} outside {width}x{height} frame{}", frame_suffix(*.frame))]
    BboxOutOfBounds {
        frame: Option<usize>,
        bbox: (usize, usize, usize, usize),
        width: usize,
        height: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("parameter `{name}`: {detail}")]
    ParameterShape { name: String, detail: String },

    #[error("config key `{key}`: {detail}")]
    Config { key: String, detail: String },
}

fn frame_suffix(frame: Option<usize>) -> String {
    match frame {
        Some(i) => format!(" at frame {i}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// True for NaN/Inf aborts raised during numeric work.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
