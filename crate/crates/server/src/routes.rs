//! HTTP surface under `/api/v1`.

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::header::{CONTENT_TYPE, LOCATION};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tutorgen_core::course_io::CourseFormat;
use tutorgen_core::model::{Persona, ValidationMode};

use crate::auth::Auth;
use crate::error::ApiError;
use crate::service::{AppState, SectionPatch, Submitted};

pub const API_PREFIX: &str = "/api/v1";

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/me", get(me))
        .route("/courses", post(create_course).get(list_courses))
        .route("/courses/{id}", get(get_course))
        .route("/courses/{id}/export", get(export_course))
        .route("/courses/{id}/validation", get(validation))
        .route("/courses/{id}/publish", post(publish_course))
        .route("/courses/{id}/sections/{section_id}", patch(update_section))
        .route("/courses/{id}/personalize", post(personalize))
        .route("/jobs/{id}", get(get_job))
        .route("/curricula/{id}", get(get_curriculum))
        .route("/curricula/{id}/save", post(save_curriculum))
        .route("/curricula/{id}/content", post(request_content))
        .route("/content/{id}", get(get_content))
        .route(
            "/content/{id}/practices/{practice_id}/answer",
            post(submit_answer),
        )
        .fallback(|| async { ApiError::not_found("route") });
    Router::new()
        .nest(API_PREFIX, api)
        .fallback(|| async { ApiError::not_found("route") })
        .with_state(state)
}

/// JSON body whose rejections use the API error shape.
pub struct ApiJson<T>(pub T);

impl<T, S> FromRequest<S> for ApiJson<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Self(v)),
            Err(JsonRejection::MissingJsonContentType(_)) => Err(ApiError::new(
                StatusCode::UNSUPPORTED_MEDIA_TYPE,
                "unsupported_media_type",
                "expected content-type application/json",
            )),
            Err(e) => Err(ApiError::invalid_request(e.body_text())),
        }
    }
}

fn job_response(submitted: Submitted) -> Response {
    let status = if submitted.cached {
        StatusCode::OK
    } else {
        StatusCode::ACCEPTED
    };
    let location = format!("{API_PREFIX}/jobs/{}", submitted.job.id);
    let mut response = (status, Json(submitted.job)).into_response();
    if let Ok(v) = HeaderValue::from_str(&location) {
        response.headers_mut().insert(LOCATION, v);
    }
    response
}

async fn me(Auth(p): Auth) -> Json<serde_json::Value> {
    Json(json!({ "id": p.id, "role": p.role, "display_name": p.display_name }))
}

#[derive(Deserialize)]
struct FormatQuery {
    format: Option<String>,
}

fn parse_format(name: &str) -> Result<CourseFormat, ApiError> {
    match name.to_ascii_lowercase().as_str() {
        "json" => Ok(CourseFormat::Json),
        "csv" => Ok(CourseFormat::Csv),
        other => Err(ApiError::invalid_request(format!(
            "unknown format '{other}'; expected json or csv"
        ))),
    }
}

async fn create_course(
    State(state): State<AppState>,
    Auth(p): Auth,
    Query(q): Query<FormatQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let format = match q.format {
        Some(f) => parse_format(&f)?,
        None => headers
            .get(CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .and_then(CourseFormat::detect)
            .ok_or_else(|| {
                ApiError::new(
                    StatusCode::UNSUPPORTED_MEDIA_TYPE,
                    "unsupported_media_type",
                    "send application/json or text/csv, or pass ?format=",
                )
            })?,
    };
    let view = state.create_course(&p, &body, format)?;
    let location = format!("{API_PREFIX}/courses/{}", view.course.id);
    let mut response = (StatusCode::CREATED, Json(view)).into_response();
    if let Ok(v) = HeaderValue::from_str(&location) {
        response.headers_mut().insert(LOCATION, v);
    }
    Ok(response)
}

async fn list_courses(State(state): State<AppState>, Auth(p): Auth) -> impl IntoResponse {
    Json(json!({ "courses": state.list_courses(&p) }))
}

async fn get_course(
    State(state): State<AppState>,
    Auth(p): Auth,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(state.get_course(&p, &id)?))
}

async fn export_course(
    State(state): State<AppState>,
    Auth(p): Auth,
    Path(id): Path<String>,
    Query(q): Query<FormatQuery>,
) -> Result<Response, ApiError> {
    let format = parse_format(q.format.as_deref().unwrap_or("json"))?;
    let bytes = state.export_course(&p, &id, format)?;
    let content_type = match format {
        CourseFormat::Json => "application/json",
        CourseFormat::Csv => "text/csv; charset=utf-8",
    };
    Ok(([(CONTENT_TYPE, content_type)], bytes).into_response())
}

#[derive(Deserialize)]
struct ModeQuery {
    mode: Option<String>,
}

async fn validation(
    State(state): State<AppState>,
    Auth(p): Auth,
    Path(id): Path<String>,
    Query(q): Query<ModeQuery>,
) -> Result<impl IntoResponse, ApiError> {
    let mode = match q.mode.as_deref().unwrap_or("publish") {
        "draft" => ValidationMode::Draft,
        "publish" => ValidationMode::Publish,
        other => {
            return Err(ApiError::invalid_request(format!(
                "unknown mode '{other}'; expected draft or publish"
            )))
        }
    };
    let report = state.validation(&p, &id, mode)?;
    Ok(Json(json!({ "valid": report.is_valid(), "violations": report.violations })))
}

async fn publish_course(
    State(state): State<AppState>,
    Auth(p): Auth,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(state.publish_course(&p, &id)?))
}

async fn update_section(
    State(state): State<AppState>,
    Auth(p): Auth,
    Path((id, section_id)): Path<(String, String)>,
    ApiJson(patch): ApiJson<SectionPatch>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(state.update_section(&p, &id, &section_id, patch)?))
}

async fn personalize(
    State(state): State<AppState>,
    Auth(p): Auth,
    Path(id): Path<String>,
    ApiJson(persona): ApiJson<Persona>,
) -> Result<Response, ApiError> {
    Ok(job_response(state.personalize(&p, &id, persona)?))
}

async fn get_job(
    State(state): State<AppState>,
    Auth(p): Auth,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(state.get_job(&p, &id)?))
}

async fn get_curriculum(
    State(state): State<AppState>,
    Auth(p): Auth,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(state.get_curriculum(&p, &id)?))
}

async fn save_curriculum(
    State(state): State<AppState>,
    Auth(p): Auth,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(state.save_curriculum(&p, &id)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ContentRequest {
    section_id: String,
    subsection_id: String,
}

async fn request_content(
    State(state): State<AppState>,
    Auth(p): Auth,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<ContentRequest>,
) -> Result<Response, ApiError> {
    Ok(job_response(state.request_content(
        &p,
        &id,
        &req.section_id,
        &req.subsection_id,
    )?))
}

async fn get_content(
    State(state): State<AppState>,
    Auth(p): Auth,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(state.get_content(&p, &id)?))
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct AnswerRequest {
    chosen_index: usize,
}

async fn submit_answer(
    State(state): State<AppState>,
    Auth(p): Auth,
    Path((id, practice_id)): Path<(String, String)>,
    ApiJson(req): ApiJson<AnswerRequest>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(state.submit_answer(
        &p,
        &id,
        &practice_id,
        req.chosen_index,
    )?))
}
