use std::time::Duration;

use thiserror::Error;

use crate::workbook::QuestionId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure a workbook operation can surface.
///
/// Variant names double as the stable machine-readable codes returned by the
/// HTTP service and printed by the CLI, see [`Error::code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("label scale needs at least two labels")]
    ScaleTooSmall,
    #[error("duplicate label {0:?} in label scale")]
    DuplicateLabel(String),
    #[error("row {0} rejected: text is empty")]
    RowRejected(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has not been indexed")]
    NotIndexed,
    #[error("question {0} is read-only")]
    ReadOnlyQuestion(QuestionId),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("no rule for label {label:?} at position {position}")]
    RemoveMissing { label: String, position: i64 },
    #[error("rule text is empty")]
    EmptyRule,
    #[error("unknown task {0}")]
    UnknownTask(u32),
    #[error("unknown data id {0}")]
    UnknownDataId(u32),
    #[error("unsupported workbook schema version {0:?}")]
    UnsupportedVersion(String),
    #[error("invalid workbook: {0}")]
    InvalidWorkbook(String),

    #[error("n_groups {requested} out of range 1..={available}")]
    OutOfRange { requested: usize, available: usize },
    #[error("unknown group {0:?}")]
    UnknownGroup(String),
    #[error("group range is inverted: {from:?} comes after {to:?}")]
    InvertedRange { from: String, to: String },

    #[error("context question {0} has no answer")]
    MissingAnswer(QuestionId),
    #[error("no instances to annotate")]
    EmptyInstances,
    #[error("instances span more than one group")]
    MixedGroups,
    #[error("rule book has no rules")]
    EmptyRulebook,

    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited, retry after {retry_after:?}")]
    RateLimited { retry_after: Option<Duration> },
    #[error("provider returned {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("prompt is neither an instruction request nor an annotation prompt")]
    UnrecognizedPrompt,
    #[error("unknown model {0:?} in cost table")]
    UnknownModel(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("working sample is empty")]
    EmptyWorkingSample,
    #[error("an annotation task is already running")]
    AnnotationInFlight,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("every prediction was unparsed")]
    AllExcluded,
    #[error("constant vector: rank correlation undefined")]
    DegenerateConstantVector,
    #[error("need at least two bundles")]
    TooFewBundles,
    #[error("need at least two validated examples, got {0}")]
    TooFewExamples(usize),
    #[error("dev split is empty")]
    NoDevItems,

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("csv error: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::ScaleTooSmall => "ScaleTooSmall",
            Error::DuplicateLabel(_) => "DuplicateLabel",
            Error::RowRejected(_) => "RowRejected",
            Error::EmptyDataset => "EmptyDataset",
            Error::NotIndexed => "NotIndexed",
            Error::ReadOnlyQuestion(_) => "ReadOnlyQuestion",
            Error::UnknownLabel(_) => "UnknownLabel",
            Error::RemoveMissing { .. } => "RemoveMissing",
            Error::EmptyRule => "EmptyRule",
            Error::UnknownTask(_) => "UnknownTask",
            Error::UnknownDataId(_) => "UnknownDataId",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::InvalidWorkbook(_) => "InvalidWorkbook",
            Error::OutOfRange { .. } => "OutOfRange",
            Error::UnknownGroup(_) => "UnknownGroup",
            Error::InvertedRange { .. } => "InvertedRange",
            Error::MissingAnswer(_) => "MissingAnswer",
            Error::EmptyInstances => "EmptyInstances",
            Error::MixedGroups => "MixedGroups",
            Error::EmptyRulebook => "EmptyRulebook",
            Error::Transport(_) => "Transport",
            Error::RateLimited { .. } => "RateLimited",
            Error::ProviderError { .. } => "ProviderError",
            Error::UnrecognizedPrompt => "UnrecognizedPrompt",
            Error::UnknownModel(_) => "UnknownModel",
            Error::InvalidRequest(_) => "InvalidRequest",
            Error::EmptyWorkingSample => "EmptyWorkingSample",
            Error::AnnotationInFlight => "AnnotationInFlight",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::Empty => "Empty",
            Error::AllExcluded => "AllExcluded",
            Error::DegenerateConstantVector => "DegenerateConstantVector",
            Error::TooFewBundles => "TooFewBundles",
            Error::TooFewExamples(_) => "TooFewExamples",
            Error::NoDevItems => "NoDevItems",
            Error::Config(_) => "Config",
            Error::Csv(_) => "Csv",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }

    /// Whether the failure came from the LLM provider rather than from the
    /// caller's input.
    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self,
            Error::Transport(_)
                | Error::RateLimited { .. }
                | Error::ProviderError { .. }
                | Error::UnrecognizedPrompt
        )
    }
}
