use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the workbench can report. Each variant maps to a stable
/// machine-readable code via [`Error::code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("snapshot key sets differ: {0}")]
    DiffKeyMismatch(String),

    #[error("cannot read {}: {source}", path.display())]
    ScanIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest line {line}: {message}")]
    ManifestParse { line: usize, message: String },

    #[error("trace line {line}: {message}")]
    TraceParse { line: usize, message: String },

    #[error("trace nesting violated at seq {seq}: {message}")]
    TraceNesting { seq: u64, message: String },

    #[error("config does not match trace fields: {0}")]
    FilterFields(String),

    #[error("snapshot has no field `{0}`")]
    EvalMissingField(String),

    #[error("constraint list differs from the model's: {0}")]
    AbstractConfigMismatch(String),

    #[error("zoom needs raw trace `{0}`")]
    ZoomMissingTrace(String),

    #[error("no such state `{0}`")]
    UnknownState(String),

    #[error("mining exceeded its time budget after {elapsed_ms} ms")]
    MineTimeout { elapsed_ms: u64 },

    #[error("mining exceeded its memory budget of {budget} bytes")]
    MineOom { budget: u64 },

    #[error("unknown mining strategy `{0}`")]
    UnknownStrategy(String),

    #[error("state `{0}` is unreachable from the initial states")]
    ExamUnreachable(String),

    #[error("models were built under different constraint lists")]
    DiffConfigMismatch,

    #[error("model parse error at line {line}, column {column}: {message}")]
    ModelParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config error: {0}")]
    ConfigParse(String),

    #[error("constraint syntax error in `{text}`: {message}")]
    ConstraintSyntax { text: String, message: String },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::DiffKeyMismatch(_) => "DIFF_KEY_MISMATCH",
            Error::ScanIo { .. } => "SCAN_IO",
            Error::ManifestParse { .. } => "MANIFEST_PARSE",
            Error::TraceParse { .. } => "TRACE_PARSE",
            Error::TraceNesting { .. } => "TRACE_NESTING",
            Error::FilterFields(_) => "FILTER_FIELDS",
            Error::EvalMissingField(_) => "EVAL_MISSING_FIELD",
            Error::AbstractConfigMismatch(_) => "ABSTRACT_CONFIG_MISMATCH",
            Error::ZoomMissingTrace(_) => "ZOOM_MISSING_TRACE",
            Error::UnknownState(_) => "UNKNOWN_STATE",
            Error::MineTimeout { .. } => "MINE_TIMEOUT",
            Error::MineOom { .. } => "MINE_OOM",
            Error::UnknownStrategy(_) => "UNKNOWN_STRATEGY",
            Error::ExamUnreachable(_) => "EXAM_UNREACHABLE",
            Error::DiffConfigMismatch => "DIFF_CONFIG_MISMATCH",
            Error::ModelParse { .. } => "MODEL_PARSE",
            Error::ConfigParse(_) => "CONFIG_PARSE",
            Error::ConstraintSyntax { .. } => "CONSTRAINT_SYNTAX",
            Error::Scenario(_) => "SCENARIO",
            Error::Io(_) => "IO",
        }
    }

    pub(crate) fn model_parse(err: serde_json::Error) -> Self {
        Error::ModelParse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
