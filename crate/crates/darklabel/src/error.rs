use darklabel_core::Error as CoreError;
use serde::Serialize;
use serde_json::Value;

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("workbook {0:?} not found")]
    WorkbookNotFound(String),
    #[error("workbook {0:?} already exists")]
    WorkbookExists(String),
    #[error("invalid workbook id {0:?}: use letters, digits, '-' and '_'")]
    InvalidWorkbookId(String),
    #[error("evaluation {0} not found")]
    EvaluationNotFound(u32),
    #[error("an annotation task is already running for this workbook")]
    AnnotationInFlight,
    #[error("{0}")]
    BadRequest(String),
    #[error("missing or wrong bearer token")]
    Unauthorized,
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Core(CoreError::Io(e))
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        ServiceError::Core(CoreError::Json(e))
    }
}

/// Coarse classes the HTTP layer maps onto status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Precondition,
    NotFound,
    Conflict,
    Provider,
    Unauthorized,
    Internal,
}

impl ServiceError {
    /// Stable machine-readable code, named after the error variant.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Core(e) => e.code(),
            ServiceError::WorkbookNotFound(_) => "WorkbookNotFound",
            ServiceError::WorkbookExists(_) => "WorkbookExists",
            ServiceError::InvalidWorkbookId(_) => "InvalidWorkbookId",
            ServiceError::EvaluationNotFound(_) => "EvaluationNotFound",
            ServiceError::AnnotationInFlight => "AnnotationInFlight",
            ServiceError::BadRequest(_) => "BadRequest",
            ServiceError::Unauthorized => "Unauthorized",
            ServiceError::Internal(_) => "Internal",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            ServiceError::Core(e) if e.is_provider_failure() => ErrorClass::Provider,
            ServiceError::Core(CoreError::UnknownTask(_) | CoreError::UnknownDataId(_)) => {
                ErrorClass::NotFound
            }
            ServiceError::Core(CoreError::AnnotationInFlight) => ErrorClass::Conflict,
            ServiceError::Core(CoreError::Io(_)) => ErrorClass::Internal,
            ServiceError::Core(_) => ErrorClass::Precondition,
            ServiceError::WorkbookNotFound(_) | ServiceError::EvaluationNotFound(_) => {
                ErrorClass::NotFound
            }
            ServiceError::WorkbookExists(_) | ServiceError::AnnotationInFlight => {
                ErrorClass::Conflict
            }
            ServiceError::InvalidWorkbookId(_) | ServiceError::BadRequest(_) => {
                ErrorClass::Precondition
            }
            ServiceError::Unauthorized => ErrorClass::Unauthorized,
            ServiceError::Internal(_) => ErrorClass::Internal,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let details = match self {
            ServiceError::Core(CoreError::RateLimited { retry_after }) => {
                serde_json::json!({ "retry_after_ms": retry_after.map(|d| d.as_millis() as u64) })
            }
            ServiceError::Core(CoreError::ProviderError { status, .. }) => {
                serde_json::json!({ "status": status })
            }
            ServiceError::Core(CoreError::RowRejected(row)) => serde_json::json!({ "row": row }),
            ServiceError::Core(CoreError::MissingAnswer(q)) => {
                serde_json::json!({ "question_id": q })
            }
            _ => Value::Null,
        };
        ErrorBody {
            code: self.code().to_owned(),
            message: self.to_string(),
            details,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub details: Value,
}
