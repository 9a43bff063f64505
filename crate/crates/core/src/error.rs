use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {file} at line {line}: {message}")]
    Parse {
        file: String,
        line: u64,
        message: String,
    },

    #[error("mashup {mashup} references unknown api `{api}`")]
    DanglingReference { mashup: String, api: String },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("classifier unavailable: {0}")]
    ClassifierUnavailable(String),

    #[error("empty network: {0}")]
    EmptyNetwork(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("unknown year {0}")]
    UnknownYear(i32),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("model request failed: {0}")]
    Model(String),

    #[error("model authentication rejected (status {0})")]
    ModelAuth(u16),

    #[error("could not parse model output as {expected}: {text:?}")]
    SchemaParse {
        expected: &'static str,
        text: String,
    },

    #[error("rule compile error near `{fragment}`: {message}")]
    RuleCompile { fragment: String, message: String },

    #[error("unresolved rule variable `{0}`")]
    UnresolvedVariable(String),

    #[error("entity partition failed for: {0:?}")]
    Partition(Vec<String>),

    #[error("no successful runs for method `{0}`")]
    NoRuns(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
