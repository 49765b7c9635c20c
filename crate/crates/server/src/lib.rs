//! HTTP+JSON front end for [`suba::service::TrialService`].

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use suba::service::{ServiceError, TrialService, TrialSpec};
use suba::PatientId;

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<TrialService>,
    /// Static bearer token; `None` leaves the API open.
    pub token: Option<Arc<str>>,
}

/// Error body: `{"error": {"code": ..., "message": ...}}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let (status, code) = match &e {
            ServiceError::TrialNotFound(_) | ServiceError::PatientNotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServiceError::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
            ServiceError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ServiceError::IdempotencyMismatch(_) => (StatusCode::CONFLICT, "idempotency_mismatch"),
            ServiceError::NoOutcomes => (StatusCode::CONFLICT, "no_outcomes"),
            ServiceError::Journal(_)
            | ServiceError::Corrupt { .. }
            | ServiceError::Replay { .. }
            | ServiceError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code.to_string(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Mutations rebuild the posterior, which takes milliseconds; keep them off
/// the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

fn json_body<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> ApiResult<T> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return serde_json::from_slice(b"{}").map_err(|e| ApiError::bad_request(e.to_string()));
    }
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(e.to_string()))
}

async fn create_trial(State(app): State<AppState>, headers: HeaderMap, body: axum::body::Bytes) -> ApiResult<Response> {
    let spec: TrialSpec = json_body(&body)?;
    let key = match headers.get(IDEMPOTENCY_HEADER) {
        Some(v) => Some(
            v.to_str()
                .map_err(|_| ApiError::bad_request("idempotency key must be visible ASCII"))?
                .to_string(),
        ),
        None => None,
    };
    let service = Arc::clone(&app.service);
    let view = blocking(move || service.create_trial(&spec, key.as_deref())).await?;
    let status = if view.created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(view)).into_response())
}

async fn list_trials(State(app): State<AppState>) -> Json<Vec<String>> {
    Json(app.service.trial_ids())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EnrollRequest {
    pub biomarkers: Vec<f64>,
}

async fn enroll(State(app): State<AppState>, Path(id): Path<String>, body: axum::body::Bytes) -> ApiResult<Response> {
    let req: EnrollRequest = json_body(&body)?;
    let service = Arc::clone(&app.service);
    let view = blocking(move || service.enroll_patient(&id, &req.biomarkers)).await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OutcomeRequest {
    /// True for a response.
    pub y: bool,
}

async fn outcome(
    State(app): State<AppState>,
    Path((id, patient)): Path<(String, u32)>,
    body: axum::body::Bytes,
) -> ApiResult<Response> {
    let req: OutcomeRequest = json_body(&body)?;
    let service = Arc::clone(&app.service);
    let view = blocking(move || service.record_outcome(&id, PatientId(patient), req.y)).await?;
    Ok(Json(view).into_response())
}

async fn state(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(app.service.state(&id)?).into_response())
}

async fn partition(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let service = Arc::clone(&app.service);
    let view = blocking(move || service.partition(&id)).await?;
    Ok(Json(view).into_response())
}

#[derive(Debug, Deserialize)]
struct PredictiveQuery {
    x: String,
}

/// Parses `v1,v2,...,vK`.
pub fn parse_profile(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| format!("{v:?} is not a number"))
        })
        .collect()
}

async fn predictive(
    State(app): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<PredictiveQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let x = parse_profile(&q.x).map_err(ApiError::bad_request)?;
    Ok(Json(app.service.predictive(&id, &x)?).into_response())
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    since: u64,
}

async fn events(
    State(app): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<EventsQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    Ok(Json(app.service.events(&id, q.since)?).into_response())
}

async fn require_token(State(app): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &app.token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_ref()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(req).await
}

async fn health() -> &'static str {
    "ok"
}

/// The API router. Static console assets are served from `console_dir`
/// for every path the API does not claim.
pub fn router(app: AppState, console_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/trials", post(create_trial).get(list_trials))
        .route("/trials/{id}/patients", post(enroll))
        .route("/trials/{id}/patients/{pid}/outcome", post(outcome))
        .route("/trials/{id}/state", get(state))
        .route("/trials/{id}/partition", get(partition))
        .route("/trials/{id}/predictive", get(predictive))
        .route("/trials/{id}/events", get(events))
        .route_layer(middleware::from_fn_with_state(app.clone(), require_token))
        .route("/healthz", get(health))
        .with_state(app);
    match console_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}
