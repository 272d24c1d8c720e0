//! Local HTTP API for grid front ends. Binds to loopback only.

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use discom_core::model::{CellAddress, RangeRef};
use discom_server::api::ErrorBody;
use serde::Deserialize;

use crate::agent::AgentError;
use crate::api::ApiError;
use crate::service::{AgentHandle, Command, ExportRequest};

pub struct LocalError(StatusCode, String, String);

impl From<AgentError> for LocalError {
    fn from(e: AgentError) -> Self {
        let (status, kind) = match &e {
            AgentError::ReadOnly { .. } => (403, "read_only"),
            AgentError::MissingSheet(_) | AgentError::Address(_) | AgentError::Workbook(_) => (422, "invalid"),
            AgentError::UnknownExport(_) => (404, "not_found"),
            AgentError::Api(ApiError::Unreachable(_)) => (503, "unreachable"),
            AgentError::Api(ApiError::Rejected(p)) => (p.status(), p.kind()),
            AgentError::Io { .. } | AgentError::Xml { .. } | AgentError::Meta(_) => (500, "storage"),
        };
        let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        LocalError(status, kind.to_string(), e.to_string())
    }
}

impl IntoResponse for LocalError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            kind: self.1,
            error: self.2,
            latest_version: None,
        };
        (self.0, Json(body)).into_response()
    }
}

fn gone() -> LocalError {
    LocalError(
        StatusCode::SERVICE_UNAVAILABLE,
        "stopped".into(),
        "agent is shutting down".into(),
    )
}

type LocalResult<T> = Result<Json<T>, LocalError>;

async fn ask<T>(
    h: &AgentHandle,
    make: impl FnOnce(tokio::sync::oneshot::Sender<Result<T, AgentError>>) -> Command,
) -> LocalResult<T> {
    match h.ask(make).await {
        Some(r) => Ok(Json(r?)),
        None => Err(gone()),
    }
}

async fn grid(State(h): State<AgentHandle>) -> Response {
    match h.ask(Command::Grid).await {
        Some(view) => Json(view).into_response(),
        None => gone().into_response(),
    }
}

#[derive(Deserialize)]
struct CellEdit {
    addr: String,
    input: String,
}

async fn set_cell(State(h): State<AgentHandle>, Json(edit): Json<CellEdit>) -> Response {
    let addr = match CellAddress::parse(&edit.addr) {
        Ok(a) => a,
        Err(e) => return LocalError::from(AgentError::from(e)).into_response(),
    };
    ask(&h, |reply| Command::SetCell {
        addr,
        input: edit.input,
        reply,
    })
    .await
    .into_response()
}

async fn register_export(State(h): State<AgentHandle>, Json(request): Json<ExportRequest>) -> Response {
    ask(&h, |reply| Command::Export { request, reply }).await.into_response()
}

#[derive(Deserialize)]
struct ImportRequest {
    export_id: String,
    target: RangeRef,
}

async fn bind_import(State(h): State<AgentHandle>, Json(req): Json<ImportRequest>) -> Response {
    ask(&h, |reply| Command::Import {
        export_id: req.export_id,
        target: req.target,
        reply,
    })
    .await
    .into_response()
}

async fn resume(State(h): State<AgentHandle>, Path(id): Path<String>) -> Response {
    ask(&h, |reply| Command::Resume { export_id: id, reply })
        .await
        .map(|_| StatusCode::NO_CONTENT)
        .into_response()
}

async fn catalog(State(h): State<AgentHandle>) -> Response {
    ask(&h, Command::Catalog).await.into_response()
}

async fn sync(State(h): State<AgentHandle>) -> Response {
    ask(&h, Command::Sync).await.into_response()
}

pub fn router(handle: AgentHandle) -> Router {
    Router::new()
        .route("/local/grid", get(grid))
        .route("/local/cells", post(set_cell))
        .route("/local/exports", post(register_export))
        .route("/local/exports/{id}/resume", post(resume))
        .route("/local/imports", post(bind_import))
        .route("/local/catalog", get(catalog))
        .route("/local/sync", post(sync))
        .with_state(handle)
}
