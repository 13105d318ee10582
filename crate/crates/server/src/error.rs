use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use serde_json::{json, Value};
use tutorgen_core::cache::StoreError;
use tutorgen_core::course_io::ImportError;
use tutorgen_core::model::ValidationReport;
use tutorgen_core::pipeline::PipelineError;

/// Error body: `{code, message, details?}` with a stable `code`.
#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            details: None,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn unauthorized() -> Self {
        Self::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "missing or unknown bearer token",
        )
    }

    pub fn forbidden(role: &str) -> Self {
        Self::new(
            StatusCode::FORBIDDEN,
            "forbidden",
            format!("this route requires the {role} role"),
        )
    }

    pub fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    pub fn invalid_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    pub fn invalid_course(report: &ValidationReport) -> Self {
        Self::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_course",
            report.to_string(),
        )
        .with_details(json!({ "kind": "validation", "violations": report.violations }))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

impl From<ImportError> for ApiError {
    fn from(err: ImportError) -> Self {
        let location = err.location();
        match &err {
            ImportError::Validation(report) => Self::invalid_course(report),
            ImportError::Parse { .. } => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "parse_error",
                err.to_string(),
            )
            .with_details(json!({ "kind": "parse", "location": location })),
            ImportError::Schema { .. } => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "schema_error",
                err.to_string(),
            )
            .with_details(json!({ "kind": "schema", "location": location })),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(err: StoreError) -> Self {
        tracing::error!(error = %err, "storage failure");
        Self::internal("storage failure")
    }
}

impl From<PipelineError> for ApiError {
    fn from(err: PipelineError) -> Self {
        match err {
            PipelineError::CurriculumNotSaved => Self::new(
                StatusCode::CONFLICT,
                "curriculum_not_saved",
                "save the curriculum before requesting content",
            ),
            PipelineError::VersionMismatch => Self::new(
                StatusCode::CONFLICT,
                "version_mismatch",
                "the course changed after this curriculum was generated; personalize again",
            ),
            PipelineError::UnknownSection(_) => Self::not_found("section"),
            PipelineError::UnknownSubsection(_) => Self::not_found("subsection"),
            PipelineError::IndexOutOfRange { index, len } => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "index_out_of_range",
                format!("choice index {index} out of range for {len} choices"),
            ),
            PipelineError::EmptyPersona(e) => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "empty_persona",
                e.to_string(),
            ),
            PipelineError::DraftCourse(report) => Self::invalid_course(&report),
            other => {
                tracing::error!(error = %other, "unexpected pipeline error in request path");
                Self::internal("generation setup failed")
            }
        }
    }
}
