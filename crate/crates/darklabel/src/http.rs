//! JSON over HTTP. Each handler parses its input and calls one
//! [`Service`] method; errors become `{code, message, details}`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{ErrorClass, Result, ServiceError};
use crate::ops::{
    AddShots, AnnotateRequest, ContextUpdate, CreateWorkbook, EvaluateRequest, Op, OptimizeRequest,
    RulesUpdate, SampleRequest, Service, ValidateRequest,
};
use crate::store::Actor;

/// Every route the service answers, with the operation it delegates to.
pub const ROUTES: &[(&str, &str, Op)] = &[
    ("GET", "/healthz", Op::Health),
    ("POST", "/workbooks", Op::CreateWorkbook),
    ("GET", "/workbooks", Op::ListWorkbooks),
    ("GET", "/workbooks/{id}", Op::GetWorkbook),
    ("DELETE", "/workbooks/{id}", Op::DeleteWorkbook),
    ("POST", "/workbooks/{id}/dataset:import", Op::ImportDataset),
    ("POST", "/workbooks/{id}/dataset:index", Op::IndexDataset),
    ("GET", "/workbooks/{id}/context", Op::GetContext),
    ("PUT", "/workbooks/{id}/context", Op::SetContext),
    ("GET", "/workbooks/{id}/rules", Op::GetRules),
    ("PUT", "/workbooks/{id}/rules", Op::PutRules),
    ("GET", "/workbooks/{id}/shots", Op::GetShots),
    ("POST", "/workbooks/{id}/shots", Op::AddShots),
    ("POST", "/workbooks/{id}/sample", Op::Sample),
    ("GET", "/workbooks/{id}/sample", Op::GetSample),
    ("POST", "/workbooks/{id}/annotate", Op::Annotate),
    ("GET", "/workbooks/{id}/progress", Op::Progress),
    ("GET", "/workbooks/{id}/tasks", Op::ListTasks),
    ("GET", "/workbooks/{id}/tasks/{n}", Op::GetTask),
    ("GET", "/workbooks/{id}/tasks/{n}/export", Op::ExportTask),
    ("POST", "/workbooks/{id}/tasks/{n}/validate", Op::Validate),
    (
        "POST",
        "/workbooks/{id}/tasks/{n}/promote-shots",
        Op::PromoteShots,
    ),
    ("POST", "/workbooks/{id}/evaluate", Op::Evaluate),
    ("GET", "/workbooks/{id}/evaluations/{k}", Op::GetEvaluation),
    ("GET", "/workbooks/{id}/rule-similarity", Op::RuleSimilarity),
    ("POST", "/workbooks/{id}/optimize", Op::Optimize),
];

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<Service>,
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self.class() {
            ErrorClass::Precondition => StatusCode::BAD_REQUEST,
            ErrorClass::NotFound => StatusCode::NOT_FOUND,
            ErrorClass::Conflict => StatusCode::CONFLICT,
            ErrorClass::Provider => StatusCode::BAD_GATEWAY,
            ErrorClass::Unauthorized => StatusCode::UNAUTHORIZED,
            ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}

type Reply<T> = std::result::Result<T, ServiceError>;

/// An empty body means the defaults.
fn parse_or_default<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    parse(body)
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T> {
    serde_json::from_slice(body)
        .map_err(|e| ServiceError::BadRequest(format!("invalid request body: {e}")))
}

fn csv_response(text: String) -> Response {
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], text).into_response()
}

async fn healthz(State(s): State<AppState>) -> Json<crate::ops::Health> {
    Json(s.service.health())
}

async fn create_workbook(State(s): State<AppState>, body: Bytes) -> Reply<Response> {
    let req: CreateWorkbook = parse(&body)?;
    let summary = s.service.create_workbook(Actor::Http, &req)?;
    Ok((StatusCode::CREATED, Json(summary)).into_response())
}

async fn list_workbooks(State(s): State<AppState>) -> Reply<Response> {
    Ok(Json(s.service.list_workbooks()?).into_response())
}

async fn get_workbook(State(s): State<AppState>, Path(id): Path<String>) -> Reply<Response> {
    Ok(Json(s.service.get_workbook(&id)?).into_response())
}

async fn delete_workbook(State(s): State<AppState>, Path(id): Path<String>) -> Reply<Response> {
    s.service.delete_workbook(&id).await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

/// The body is the CSV file itself.
async fn import_dataset(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: String,
) -> Reply<Response> {
    Ok(Json(s.service.import_dataset(&id, Actor::Http, &body).await?).into_response())
}

async fn index_dataset(State(s): State<AppState>, Path(id): Path<String>) -> Reply<Response> {
    Ok(Json(s.service.index_dataset(&id, Actor::Http).await?).into_response())
}

async fn get_context(State(s): State<AppState>, Path(id): Path<String>) -> Reply<Response> {
    Ok(Json(s.service.get_context(&id)?).into_response())
}

async fn set_context(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Reply<Response> {
    let update: ContextUpdate = parse(&body)?;
    Ok(Json(s.service.set_context(&id, Actor::Http, &update).await?).into_response())
}

async fn get_rules(State(s): State<AppState>, Path(id): Path<String>) -> Reply<Response> {
    Ok(Json(s.service.get_rules(&id)?).into_response())
}

async fn put_rules(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Reply<Response> {
    let update: RulesUpdate = parse(&body)?;
    Ok(Json(s.service.put_rules(&id, Actor::Http, &update).await?).into_response())
}

async fn get_shots(State(s): State<AppState>, Path(id): Path<String>) -> Reply<Response> {
    Ok(Json(s.service.get_shots(&id)?).into_response())
}

async fn add_shots(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Reply<Response> {
    let req: AddShots = parse(&body)?;
    Ok(Json(s.service.add_shots(&id, Actor::Http, &req).await?).into_response())
}

async fn sample(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> Reply<Response> {
    let req: SampleRequest = parse(&body)?;
    Ok(Json(s.service.sample(&id, Actor::Http, &req).await?).into_response())
}

async fn get_sample(State(s): State<AppState>, Path(id): Path<String>) -> Reply<Response> {
    Ok(Json(s.service.get_sample(&id)?).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct WaitQuery {
    #[serde(default)]
    wait: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnnotateAccepted {
    pub task_number: u32,
    pub status: String,
}

/// Starts a task and answers 202 at once; `?wait=true` answers 200 when the
/// task has been committed.
async fn annotate(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<WaitQuery>,
    body: Bytes,
) -> Reply<Response> {
    let req: AnnotateRequest = parse_or_default(&body)?;
    let handle = s.service.annotate(&id, Actor::Http, &req).await?;
    let task_number = handle.task_number;
    if q.wait {
        handle.wait().await?;
        let done = AnnotateAccepted {
            task_number,
            status: "done".into(),
        };
        return Ok(Json(done).into_response());
    }
    let started = AnnotateAccepted {
        task_number,
        status: "started".into(),
    };
    Ok((StatusCode::ACCEPTED, Json(started)).into_response())
}

async fn progress(State(s): State<AppState>, Path(id): Path<String>) -> Reply<Response> {
    Ok(Json(s.service.progress(&id)?).into_response())
}

async fn list_tasks(State(s): State<AppState>, Path(id): Path<String>) -> Reply<Response> {
    Ok(Json(s.service.list_tasks(&id)?).into_response())
}

async fn get_task(
    State(s): State<AppState>,
    Path((id, n)): Path<(String, u32)>,
) -> Reply<Response> {
    Ok(Json(s.service.get_task(&id, n)?).into_response())
}

async fn export_task(
    State(s): State<AppState>,
    Path((id, n)): Path<(String, u32)>,
) -> Reply<Response> {
    Ok(csv_response(s.service.export_task(&id, n)?))
}

async fn validate(
    State(s): State<AppState>,
    Path((id, n)): Path<(String, u32)>,
    body: Bytes,
) -> Reply<Response> {
    let req: ValidateRequest = parse(&body)?;
    Ok(Json(s.service.validate(&id, Actor::Http, n, &req).await?).into_response())
}

async fn promote_shots(
    State(s): State<AppState>,
    Path((id, n)): Path<(String, u32)>,
) -> Reply<Response> {
    Ok(Json(s.service.promote_shots(&id, Actor::Http, n).await?).into_response())
}

/// Accepts either an [`EvaluateRequest`] or a bare gold CSV upload.
async fn evaluate(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Reply<Response> {
    let first = body.iter().find(|b| !b.is_ascii_whitespace());
    let req = match first {
        None => EvaluateRequest::default(),
        Some(b'{') => parse(&body)?,
        Some(_) => EvaluateRequest {
            gold_csv: Some(
                String::from_utf8(body.to_vec())
                    .map_err(|_| ServiceError::BadRequest("gold upload is not UTF-8".into()))?,
            ),
            ..EvaluateRequest::default()
        },
    };
    let record = s.service.evaluate(&id, Actor::Http, &req).await?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn get_evaluation(
    State(s): State<AppState>,
    Path((id, k)): Path<(String, u32)>,
) -> Reply<Response> {
    Ok(Json(s.service.get_evaluation(&id, k)?).into_response())
}

async fn rule_similarity(State(s): State<AppState>, Path(id): Path<String>) -> Reply<Response> {
    Ok(Json(s.service.rule_similarity(&id, None)?).into_response())
}

async fn optimize(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Reply<Response> {
    let req: OptimizeRequest = parse_or_default(&body)?;
    Ok(Json(s.service.optimize(&id, Actor::Http, &req).await?).into_response())
}

async fn require_token(
    State(s): State<AppState>,
    headers: HeaderMap,
    req: Request,
    next: Next,
) -> Response {
    let Some(token) = s.service.config().token.as_deref() else {
        return next.run(req).await;
    };
    if req.uri().path() == "/healthz" {
        return next.run(req).await;
    }
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented == Some(token) {
        next.run(req).await
    } else {
        ServiceError::Unauthorized.into_response()
    }
}

pub fn router(service: Arc<Service>) -> Router {
    let state = AppState { service };
    let wb = "/workbooks/{id}";
    Router::new()
        .route("/healthz", get(healthz))
        .route("/workbooks", post(create_workbook).get(list_workbooks))
        .route(wb, get(get_workbook).delete(delete_workbook))
        .route(&format!("{wb}/dataset:import"), post(import_dataset))
        .route(&format!("{wb}/dataset:index"), post(index_dataset))
        .route(&format!("{wb}/context"), get(get_context).put(set_context))
        .route(&format!("{wb}/rules"), get(get_rules).put(put_rules))
        .route(&format!("{wb}/shots"), get(get_shots).post(add_shots))
        .route(&format!("{wb}/sample"), post(sample).get(get_sample))
        .route(&format!("{wb}/annotate"), post(annotate))
        .route(&format!("{wb}/progress"), get(progress))
        .route(&format!("{wb}/tasks"), get(list_tasks))
        .route(&format!("{wb}/tasks/{{n}}"), get(get_task))
        .route(&format!("{wb}/tasks/{{n}}/export"), get(export_task))
        .route(&format!("{wb}/tasks/{{n}}/validate"), post(validate))
        .route(
            &format!("{wb}/tasks/{{n}}/promote-shots"),
            post(promote_shots),
        )
        .route(&format!("{wb}/evaluate"), post(evaluate))
        .route(&format!("{wb}/evaluations/{{k}}"), get(get_evaluation))
        .route(&format!("{wb}/rule-similarity"), get(rule_similarity))
        .route(&format!("{wb}/optimize"), post(optimize))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Binds and serves until Ctrl-C.
pub async fn serve(service: Arc<Service>, bind: &str) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
