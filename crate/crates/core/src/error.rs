use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed dates: {0}")]
    MalformedDates(String),

    #[error("bad value at data row {row}, column {column}: {reason}")]
    BadValue {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("internal gap in series of country {0}")]
    GapInSeries(String),

    #[error("panel has {months} months, shorter than one {window}-month window")]
    PanelTooShort { months: usize, window: usize },

    #[error("invalid window spec: {0}")]
    BadWindowSpec(String),

    #[error("window {window_index}: fewer than 2 countries with usable data ({detail})")]
    WindowTooSparse { window_index: usize, detail: String },

    #[error("windows are not contiguous: {0}")]
    NonContiguousWindows(String),

    #[error("index row {0} is constant; scale undefined")]
    ConstantIndexRow(String),

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("bad input: {0}")]
    BadInput(String),

    #[error("bad lambda search bounds: {0}")]
    BadBounds(String),

    #[error("need at least 2 nodes, got {0}")]
    TooFewNodes(usize),

    #[error("cluster count {k} out of range 1..={n}")]
    BadK { k: usize, n: usize },

    #[error("inconsistent inputs: {0}")]
    ConsistencyError(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("window {window_index} ({label_year}): {source}")]
    InWindow {
        window_index: usize,
        label_year: i32,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_window(self, window_index: usize, label_year: i32) -> Self {
        match self {
            e @ Error::InWindow { .. } => e,
            e => Error::InWindow {
                window_index,
                label_year,
                source: Box::new(e),
            },
        }
    }

    /// Process exit code for the CLI. Stable per error family.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InWindow { source, .. } => source.exit_code(),
            Error::MalformedDates(_) | Error::BadValue { .. } | Error::GapInSeries(_) => 3,
            Error::Csv(_) | Error::Json(_) => 3,
            Error::PanelTooShort { .. } | Error::BadWindowSpec(_) => 4,
            Error::WindowTooSparse { .. } | Error::NonContiguousWindows(_) => 5,
            Error::ConstantIndexRow(_)
            | Error::ShapeError(_)
            | Error::BadInput(_)
            | Error::BadBounds(_) => 6,
            Error::TooFewNodes(_) | Error::BadK { .. } | Error::ConsistencyError(_) => 7,
            Error::Config(_) => 2,
            Error::Io { .. } => 8,
        }
    }
}
