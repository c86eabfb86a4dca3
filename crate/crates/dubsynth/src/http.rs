//! HTTP/JSON front end. Every response body carries `"schema"`.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dubsynth_core::UpdateRule;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ServiceError;
use crate::scenario::Scenario;
use crate::service::{AcceptRequest, Service, StepRequest};
use crate::API_SCHEMA;

#[derive(Serialize)]
struct Envelope<T> {
    schema: &'static str,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize)]
struct ErrorBody {
    stage: &'static str,
    message: String,
}

#[derive(Serialize)]
struct Failure {
    error: ErrorBody,
}

fn status_of(e: &ServiceError) -> StatusCode {
    match e {
        ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
        ServiceError::Phase { .. } | ServiceError::Stale(_) => StatusCode::CONFLICT,
        ServiceError::Io { .. } | ServiceError::Corrupt(_) => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

pub struct ApiError(ServiceError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Envelope {
            schema: API_SCHEMA,
            body: Failure {
                error: ErrorBody {
                    stage: self.0.stage(),
                    message: self.0.to_string(),
                },
            },
        };
        (status_of(&self.0), Json(body)).into_response()
    }
}

fn ok<T: Serialize>(status: StatusCode, body: T) -> Response {
    (status, Json(Envelope { schema: API_SCHEMA, body })).into_response()
}

/// Runs a blocking service call off the async workers.
async fn call<T, F>(svc: Arc<Service>, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .expect("service task panicked")
        .map_err(ApiError)
}

fn bad_body(e: serde_json::Error) -> ApiError {
    ApiError(ServiceError::Json {
        context: "request body".into(),
        source: e,
    })
}

#[derive(Serialize)]
struct SessionBody<T> {
    session: T,
}

async fn create(State(svc): State<Arc<Service>>, Json(body): Json<Value>) -> Result<Response, ApiError> {
    let mut scenario: Scenario = serde_json::from_value(body).map_err(bad_body)?;
    let session = call(svc, move |s| {
        scenario.inline(std::path::Path::new("."))?;
        s.create(scenario)
    })
    .await?;
    Ok(ok(StatusCode::CREATED, SessionBody { session }))
}

async fn show(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = call(svc, move |s| s.get(&id)).await?;
    Ok(ok(StatusCode::OK, SessionBody { session }))
}

#[derive(Deserialize)]
struct Limit {
    limit: Option<usize>,
}

async fn candidates(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    Query(q): Query<Limit>,
) -> Result<Response, ApiError> {
    let limit = q.limit.unwrap_or(10);
    let list = call(svc, move |s| s.candidates(&id, limit)).await?;
    Ok(ok(StatusCode::OK, list))
}

async fn accept(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    Json(body): Json<Value>,
) -> Result<Response, ApiError> {
    let req: AcceptRequest = serde_json::from_value(body).map_err(bad_body)?;
    let session = call(svc, move |s| s.accept(&id, &req)).await?;
    Ok(ok(StatusCode::OK, SessionBody { session }))
}

async fn step(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    Json(body): Json<Value>,
) -> Result<Response, ApiError> {
    let req: StepRequest = serde_json::from_value(body).map_err(bad_body)?;
    let outcome = call(svc, move |s| s.step(&id, &req)).await?;
    Ok(ok(StatusCode::OK, outcome))
}

async fn event(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    Json(body): Json<Value>,
) -> Result<Response, ApiError> {
    let rule: UpdateRule = serde_json::from_value(body).map_err(bad_body)?;
    let session = call(svc, move |s| s.event(&id, &rule)).await?;
    Ok(ok(StatusCode::OK, SessionBody { session }))
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(show))
        .route("/sessions/{id}/candidates", get(candidates))
        .route("/sessions/{id}/accept", post(accept))
        .route("/sessions/{id}/step", post(step))
        .route("/sessions/{id}/event", post(event))
        .with_state(svc)
}
