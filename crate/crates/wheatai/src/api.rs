//! HTTP API under `/api/v1/`. Every error body is `{"code", "message"}`
//! with a code from [`ERROR_CODES`].

use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path as UrlPath, State};
use axum::http::{header, HeaderValue, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use wheatai::jobs::{JobError, JobManager, JobMode, JobSpec, ResultFile};
use wheatai::pipeline::descriptors;

pub const ERROR_CODES: &[&str] = &[
    "invalid_request",
    "unknown_pipeline",
    "unknown_image",
    "invalid_params",
    "calibration_required",
    "single_mode_one_image",
    "unknown_job",
    "job_not_finished",
    "job_not_completed",
    "unsupported_media_type",
    "payload_too_large",
    "not_found",
    "shutting_down",
    "internal",
];

pub const DEFAULT_MAX_UPLOAD: usize = 64 * 1024 * 1024;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }

    fn internal(detail: impl std::fmt::Display) -> Self {
        tracing::error!(%detail, "internal error");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "internal error")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"code": self.code, "message": self.message}))).into_response()
    }
}

impl From<JobError> for ApiError {
    fn from(e: JobError) -> Self {
        let code = e.code();
        let status = match code {
            "unknown_job" | "unknown_image" => StatusCode::NOT_FOUND,
            "job_not_finished" | "job_not_completed" => StatusCode::CONFLICT,
            "unsupported_media_type" => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            "shutting_down" => StatusCode::SERVICE_UNAVAILABLE,
            "internal" => return Self::internal(e),
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, code, e.to_string())
    }
}

pub struct AppState {
    pub manager: JobManager,
    pub max_upload: usize,
    pub static_dir: Option<PathBuf>,
    pub cors_origin: Option<HeaderValue>,
}

type Shared = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    // room for multipart framing around the largest accepted file
    let limit = state.max_upload.saturating_add(64 * 1024);
    let cors = state.cors_origin.clone();
    let api = Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/pipelines", get(pipelines))
        .route("/api/v1/images", post(upload))
        .route("/api/v1/jobs", post(submit))
        .route("/api/v1/jobs/{id}", get(status))
        .route("/api/v1/jobs/{id}/cancel", post(cancel))
        .route("/api/v1/jobs/{id}/results", get(results))
        .route("/api/v1/jobs/{id}/results.csv", get(results_csv))
        .route("/api/v1/jobs/{id}/summary.csv", get(summary_csv))
        .route("/api/v1/jobs/{id}/overlays/{file}", get(overlay))
        .fallback(fallback)
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state);
    match cors {
        Some(origin) => api.layer(axum::middleware::map_response(move |mut r: Response| {
            let origin = origin.clone();
            async move {
                r.headers_mut().insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, origin);
                r
            }
        })),
        None => api,
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

async fn pipelines() -> Json<serde_json::Value> {
    Json(serde_json::to_value(descriptors()).expect("descriptors serialize"))
}

async fn upload(State(st): Shared, mut form: Multipart) -> Result<Response, ApiError> {
    let too_large = |st: &AppState| {
        ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "payload_too_large",
            format!("images are limited to {} bytes", st.max_upload),
        )
    };
    let multipart_err = |e: axum::extract::multipart::MultipartError, st: &AppState| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            too_large(st)
        } else {
            ApiError::bad_request(e.body_text())
        }
    };
    while let Some(field) = form.next_field().await.map_err(|e| multipart_err(e, &st))? {
        let Some(filename) = field.file_name().map(str::to_owned) else { continue };
        let bytes = field.bytes().await.map_err(|e| multipart_err(e, &st))?;
        if bytes.len() > st.max_upload {
            return Err(too_large(&st));
        }
        let st2 = Arc::clone(&st);
        let meta = tokio::task::spawn_blocking(move || st2.manager.store().put_image(&bytes, &filename))
            .await
            .map_err(ApiError::internal)??;
        return Ok(Json(meta).into_response());
    }
    Err(ApiError::bad_request("expected a multipart file field"))
}

async fn submit(State(st): Shared, body: Bytes) -> Result<Response, ApiError> {
    let spec: JobSpec =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("job spec: {e}")))?;
    let single = spec.mode == JobMode::Single;
    let st2 = Arc::clone(&st);
    let rec = tokio::task::spawn_blocking(move || {
        if single {
            st2.manager.run_single(spec)
        } else {
            st2.manager.submit(spec)
        }
    })
    .await
    .map_err(ApiError::internal)??;
    if !single {
        return Ok((StatusCode::ACCEPTED, Json(rec)).into_response());
    }
    let path = st.manager.store().job_dir(&rec.job_id).join(ResultFile::Json.file_name());
    let results = match tokio::fs::read(&path).await {
        Ok(b) => serde_json::from_slice::<serde_json::Value>(&b).map_err(ApiError::internal)?,
        Err(_) => serde_json::Value::Null,
    };
    Ok(Json(json!({"job": rec, "results": results})).into_response())
}

async fn status(State(st): Shared, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    Ok(Json(st.manager.status(&id)?).into_response())
}

async fn cancel(State(st): Shared, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    Ok(Json(st.manager.cancel(&id)?).into_response())
}

async fn serve_file(path: PathBuf, content_type: &'static str) -> Result<Response, ApiError> {
    let bytes = tokio::fs::read(&path).await.map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response())
}

async fn results(State(st): Shared, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    serve_file(st.manager.result_path(&id, ResultFile::Json)?, "application/json").await
}

async fn results_csv(State(st): Shared, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    serve_file(st.manager.result_path(&id, ResultFile::Csv)?, "text/csv; charset=utf-8").await
}

async fn summary_csv(State(st): Shared, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    serve_file(st.manager.result_path(&id, ResultFile::SummaryCsv)?, "text/csv; charset=utf-8").await
}

async fn overlay(State(st): Shared, UrlPath((id, file)): UrlPath<(String, String)>) -> Result<Response, ApiError> {
    let image_id = file
        .strip_suffix(".png")
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_image", format!("no overlay {file:?}")))?;
    serve_file(st.manager.overlay_path(&id, image_id)?, "image/png").await
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript",
        "css" => "text/css",
        "json" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "ico" => "image/x-icon",
        "wasm" => "application/wasm",
        _ => "application/octet-stream",
    }
}

/// Static UI files when configured, otherwise (and for any `/api` path) a
/// JSON 404.
async fn fallback(State(st): Shared, method: Method, uri: Uri) -> Response {
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no route for {}", uri.path())).into_response();
    let Some(root) = &st.static_dir else { return not_found() };
    if method != Method::GET || uri.path().starts_with("/api/") {
        return not_found();
    }
    let rel = Path::new(uri.path().trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return not_found();
    }
    let mut path = root.join(rel);
    if path.is_dir() || rel.as_os_str().is_empty() {
        path = path.join("index.html");
    }
    // single-page app: unknown paths get the shell
    if !path.is_file() {
        path = root.join("index.html");
    }
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => not_found(),
    }
}
