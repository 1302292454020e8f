//! JSON-over-HTTP binding of [`Gateway`]. The caller is named by the `X-Caller-Id`
//! header; errors come back as `{"error": {"class", "message"}}` with a status
//! code per error class.

use std::future::Future;
use std::sync::Arc;

use analysis_base::{Error, ErrorClass, Id};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use tokio::net::TcpListener;

use crate::ops::{
    parse_id, ActiveFlag, AnalysisRequest, Gateway, ImportOptions, ItemQuery, NewAlgorithm,
    NewUser, PipelineSearch, PipelineSubmission, TemplateParams,
};

pub const CALLER_HEADER: &str = "x-caller-id";

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

pub fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::Io { .. } | Error::Corrupt(_) => StatusCode::INTERNAL_SERVER_ERROR,
        Error::Conflict(_) => StatusCode::CONFLICT,
        other => match other.class() {
            ErrorClass::Validation => StatusCode::BAD_REQUEST,
            ErrorClass::Permission => StatusCode::FORBIDDEN,
            ErrorClass::NotFound => StatusCode::NOT_FOUND,
            ErrorClass::State => StatusCode::CONFLICT,
        },
    }
}

pub fn class_name(c: ErrorClass) -> &'static str {
    match c {
        ErrorClass::Validation => "validation",
        ErrorClass::Permission => "permission",
        ErrorClass::NotFound => "not_found",
        ErrorClass::State => "state",
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "error": {
                "class": class_name(self.0.class()),
                "message": self.0.to_string(),
            }
        });
        (status_for(&self.0), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn caller(headers: &HeaderMap) -> Result<Option<Id>, ApiError> {
    match headers.get(CALLER_HEADER) {
        None => Ok(None),
        Some(v) => {
            let s = v
                .to_str()
                .map_err(|_| Error::Validation("caller header is not text".into()))?;
            Ok(Some(parse_id(s)?))
        }
    }
}

fn body<T: serde::de::DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(bytes)
        .map_err(|e| ApiError(Error::Validation(format!("malformed request body: {e}"))))
}

/// Runs a store operation off the async workers.
async fn blocking<T, F>(gw: Arc<Gateway>, f: F) -> ApiResult<T>
where
    T: Serialize + Send + 'static,
    F: FnOnce(&Gateway) -> analysis_base::Result<T> + Send + 'static,
{
    let out = tokio::task::spawn_blocking(move || f(&gw))
        .await
        .map_err(|e| Error::State(format!("request handler panicked: {e}")))?;
    Ok(Json(out?))
}

pub fn router(gw: Arc<Gateway>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/users", post(register_user))
        .route("/users/{id}/active", patch(set_active))
        .route("/datasets/import", post(import_dataset))
        .route("/datasets/{id}", get(dataset))
        .route("/algorithms", post(register_algorithm))
        .route("/pipelines", post(register_pipeline))
        .route("/pipelines/{id}/versions", post(update_pipeline))
        .route("/analyses", post(run_analysis))
        .route("/analyses/{id}", get(analysis))
        .route("/analyses/{id}/provenance", get(provenance))
        .route("/query/items", get(query_items))
        .route("/query/pipelines", get(query_pipelines))
        .route("/query/provenance/{template}", get(template))
        .route("/audit", get(audit))
        .with_state(gw)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn register_user(State(gw): State<Arc<Gateway>>, headers: HeaderMap, b: Bytes) -> impl IntoResponse {
    let who = caller(&headers)?;
    let req: NewUser = body(&b)?;
    let out = blocking(gw, move |g| g.register_user(who, &req)).await?;
    Ok::<_, ApiError>((StatusCode::CREATED, out))
}

async fn set_active(
    State(gw): State<Arc<Gateway>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    b: Bytes,
) -> impl IntoResponse {
    let who = caller(&headers)?;
    let user = parse_id(&id)?;
    let flag: ActiveFlag = body(&b)?;
    blocking(gw, move |g| g.set_user_active(who, user, &flag)).await
}

async fn import_dataset(
    State(gw): State<Arc<Gateway>>,
    Query(opts): Query<ImportOptions>,
    headers: HeaderMap,
    b: Bytes,
) -> impl IntoResponse {
    let who = caller(&headers)?;
    let out = blocking(gw, move |g| g.import_dataset(who, &b, &opts)).await?;
    Ok::<_, ApiError>((StatusCode::CREATED, out))
}

async fn dataset(State(gw): State<Arc<Gateway>>, Path(id): Path<String>, headers: HeaderMap) -> impl IntoResponse {
    let who = caller(&headers)?;
    let id = parse_id(&id)?;
    blocking(gw, move |g| g.dataset(who, id)).await
}

async fn register_algorithm(State(gw): State<Arc<Gateway>>, headers: HeaderMap, b: Bytes) -> impl IntoResponse {
    let who = caller(&headers)?;
    let req: NewAlgorithm = body(&b)?;
    let out = blocking(gw, move |g| g.register_algorithm(who, &req)).await?;
    Ok::<_, ApiError>((StatusCode::CREATED, out))
}

async fn register_pipeline(State(gw): State<Arc<Gateway>>, headers: HeaderMap, b: Bytes) -> impl IntoResponse {
    let who = caller(&headers)?;
    let req: PipelineSubmission = body(&b)?;
    let out = blocking(gw, move |g| g.register_pipeline(who, &req)).await?;
    Ok::<_, ApiError>((StatusCode::CREATED, out))
}

async fn update_pipeline(
    State(gw): State<Arc<Gateway>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    b: Bytes,
) -> impl IntoResponse {
    let who = caller(&headers)?;
    let pid = parse_id(&id)?;
    let req: PipelineSubmission = body(&b)?;
    let out = blocking(gw, move |g| g.update_pipeline(who, pid, &req)).await?;
    Ok::<_, ApiError>((StatusCode::CREATED, out))
}

async fn run_analysis(State(gw): State<Arc<Gateway>>, headers: HeaderMap, b: Bytes) -> impl IntoResponse {
    let who = caller(&headers)?;
    let req: AnalysisRequest = body(&b)?;
    let out = blocking(gw, move |g| g.run_analysis(who, &req)).await?;
    Ok::<_, ApiError>((StatusCode::CREATED, out))
}

async fn analysis(State(gw): State<Arc<Gateway>>, Path(id): Path<String>) -> impl IntoResponse {
    let id = parse_id(&id)?;
    blocking(gw, move |g| g.analysis(id)).await
}

async fn provenance(State(gw): State<Arc<Gateway>>, Path(id): Path<String>) -> impl IntoResponse {
    let id = parse_id(&id)?;
    blocking(gw, move |g| g.provenance(id)).await
}

async fn query_items(
    State(gw): State<Arc<Gateway>>,
    Query(q): Query<ItemQuery>,
    headers: HeaderMap,
) -> impl IntoResponse {
    let who = caller(&headers)?;
    blocking(gw, move |g| g.query_items(who, &q)).await
}

async fn query_pipelines(State(gw): State<Arc<Gateway>>, Query(q): Query<PipelineSearch>) -> impl IntoResponse {
    blocking(gw, move |g| g.query_pipelines(&q)).await
}

async fn template(
    State(gw): State<Arc<Gateway>>,
    Path(name): Path<String>,
    Query(p): Query<TemplateParams>,
) -> impl IntoResponse {
    blocking(gw, move |g| g.provenance_template(&name, &p)).await
}

async fn audit(State(gw): State<Arc<Gateway>>) -> impl IntoResponse {
    blocking(gw, |g| Ok(g.audit())).await
}

/// Serves until `shutdown` resolves, then flushes the store.
pub async fn serve(
    listener: TcpListener,
    gw: Arc<Gateway>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> analysis_base::Result<()> {
    axum::serve(listener, router(gw.clone()))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| Error::State(format!("server failed: {e}")))?;
    gw.base().store().sync()
}
