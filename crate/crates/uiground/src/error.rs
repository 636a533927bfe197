use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{what} = {value} outside [0,1]")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid sample: {0}")]
    Sample(String),

    #[error("xml parse error at line {line}, column {col}: {msg}")]
    XmlParse { line: u32, col: u32, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("missing predictions for {} case(s), first ids: {}", .0.len(), .0.iter().take(8).cloned().collect::<Vec<_>>().join(", "))]
    MissingPredictions(Vec<String>),

    #[error("duplicate prediction for id {0}")]
    DuplicatePrediction(String),

    #[error("http: {0}")]
    Http(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
