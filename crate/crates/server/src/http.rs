//! HTTP transport for [`Platform`](crate::Platform).

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use discom_core::composition::{ExportDescriptor, ImportBinding, Space};
use discom_core::model::{decode_range_image, encode_range_image};
use serde_json::{json, Value};

use crate::api::*;
use crate::config::ServerConfig;
use crate::{Platform, PlatformError, PlatformOptions, PropagationMode};

#[derive(Clone)]
struct AppState {
    platform: Arc<Platform>,
    admin_token: Option<Arc<str>>,
}

pub struct ApiError(PlatformError);

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let latest_version = match &self.0 {
            PlatformError::Conflict { latest_version, .. } => *latest_version,
            _ => None,
        };
        let body = ErrorBody {
            kind: self.0.kind().to_string(),
            error: self.0.to_string(),
            latest_version,
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn bearer(headers: &HeaderMap) -> Result<String, PlatformError> {
    headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| t.trim().to_string())
        .ok_or(PlatformError::Unauthenticated)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, PlatformError> + Send + 'static) -> ApiResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map(Json).map_err(ApiError),
        Err(e) => Err(ApiError(PlatformError::Storage(format!("worker failed: {e}")))),
    }
}

/// Authenticates the bearer token, then runs `f` as that user on a
/// blocking thread.
async fn as_user<T: Send + 'static>(
    state: &AppState,
    headers: &HeaderMap,
    f: impl FnOnce(&Platform, &str) -> Result<T, PlatformError> + Send + 'static,
) -> ApiResult<T> {
    let token = bearer(headers)?;
    let p = state.platform.clone();
    blocking(move || {
        let user = p.authenticate(&token)?;
        f(&p, &user)
    })
    .await
}

async fn as_admin<T: Send + 'static>(
    state: &AppState,
    headers: &HeaderMap,
    f: impl FnOnce(&Platform) -> Result<T, PlatformError> + Send + 'static,
) -> ApiResult<T> {
    let token = bearer(headers)?;
    match &state.admin_token {
        Some(admin) if constant_eq(admin.as_bytes(), token.as_bytes()) => {}
        _ => return Err(ApiError(PlatformError::Unauthenticated)),
    }
    let p = state.platform.clone();
    blocking(move || f(&p)).await
}

fn constant_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn healthz() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn login(State(s): State<AppState>, Json(req): Json<LoginRequest>) -> ApiResult<LoginResponse> {
    let p = s.platform.clone();
    blocking(move || Ok(LoginResponse { token: p.login(&req.user, &req.secret)? })).await
}

async fn add_user(State(s): State<AppState>, h: HeaderMap, Json(req): Json<NewUser>) -> ApiResult<UserInfo> {
    as_admin(&s, &h, move |p| p.add_user(req)).await
}

async fn list_users(State(s): State<AppState>, h: HeaderMap) -> ApiResult<Vec<UserInfo>> {
    as_admin(&s, &h, |p| p.list_users()).await
}

async fn remove_user(State(s): State<AppState>, h: HeaderMap, Path(id): Path<String>) -> ApiResult<Value> {
    as_admin(&s, &h, move |p| p.remove_user(&id).map(|_| json!({"removed": id}))).await
}

async fn create_space(State(s): State<AppState>, h: HeaderMap, Json(req): Json<NewSpace>) -> ApiResult<Space> {
    as_user(&s, &h, move |p, u| p.create_space(u, &req.name)).await
}

async fn list_spaces(State(s): State<AppState>, h: HeaderMap) -> ApiResult<Vec<Space>> {
    as_user(&s, &h, |p, u| p.list_spaces(u)).await
}

async fn delete_space(State(s): State<AppState>, h: HeaderMap, Path(id): Path<String>) -> ApiResult<Value> {
    as_user(&s, &h, move |p, u| p.delete_space(u, &id).map(|_| json!({"deleted": id}))).await
}

async fn add_member(
    State(s): State<AppState>,
    h: HeaderMap,
    Path(id): Path<String>,
    Json(req): Json<NewMember>,
) -> ApiResult<Space> {
    as_user(&s, &h, move |p, u| p.add_member(u, &id, &req.user, req.role)).await
}

async fn remove_member(
    State(s): State<AppState>,
    h: HeaderMap,
    Path((id, user)): Path<(String, String)>,
) -> ApiResult<Space> {
    as_user(&s, &h, move |p, u| p.remove_member(u, &id, &user)).await
}

async fn register_export(
    State(s): State<AppState>,
    h: HeaderMap,
    Json(req): Json<NewExport>,
) -> ApiResult<ExportDescriptor> {
    as_user(&s, &h, move |p, u| p.register_export(u, req)).await
}

async fn list_exports(State(s): State<AppState>, h: HeaderMap) -> ApiResult<Vec<ExportDescriptor>> {
    as_user(&s, &h, |p, u| p.list_exports(u)).await
}

async fn get_export(State(s): State<AppState>, h: HeaderMap, Path(id): Path<String>) -> ApiResult<ExportDescriptor> {
    as_user(&s, &h, move |p, u| p.get_export(u, &id)).await
}

async fn update_export(
    State(s): State<AppState>,
    h: HeaderMap,
    Path(id): Path<String>,
    Json(req): Json<ExportPatch>,
) -> ApiResult<ExportDescriptor> {
    as_user(&s, &h, move |p, u| p.update_export(u, &id, req)).await
}

async fn revoke_export(State(s): State<AppState>, h: HeaderMap, Path(id): Path<String>) -> ApiResult<ExportDescriptor> {
    as_user(&s, &h, move |p, u| p.revoke_export(u, &id)).await
}

async fn push_contribution(
    State(s): State<AppState>,
    h: HeaderMap,
    Path(id): Path<String>,
    Json(req): Json<PushRequest>,
) -> ApiResult<PushResponse> {
    as_user(&s, &h, move |p, u| {
        let image = decode_range_image(&req.image).map_err(|e| PlatformError::Integrity(e.to_string()))?;
        let version = p.push_contribution(u, &id, &image, req.base_version)?;
        Ok(PushResponse { version })
    })
    .await
}

async fn latest_contribution(
    State(s): State<AppState>,
    h: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Option<Contribution>> {
    as_user(&s, &h, move |p, u| {
        Ok(p.latest_contribution(u, &id)?.map(|c| Contribution {
            version: c.image.version(),
            authored_by: c.authored_by,
            image: encode_range_image(&c.image),
        }))
    })
    .await
}

async fn register_import(
    State(s): State<AppState>,
    h: HeaderMap,
    Json(req): Json<NewImport>,
) -> ApiResult<ImportBinding> {
    as_user(&s, &h, move |p, u| p.register_import(u, req)).await
}

async fn list_imports(State(s): State<AppState>, h: HeaderMap) -> ApiResult<Vec<ImportBinding>> {
    as_user(&s, &h, |p, u| p.list_imports(u)).await
}

async fn delete_import(State(s): State<AppState>, h: HeaderMap, Path(id): Path<String>) -> ApiResult<Value> {
    as_user(&s, &h, move |p, u| p.delete_import(u, &id).map(|_| json!({"deleted": id}))).await
}

async fn poll_updates(State(s): State<AppState>, h: HeaderMap, Json(req): Json<PollRequest>) -> ApiResult<PollResponse> {
    as_user(&s, &h, move |p, u| {
        let known: Vec<(String, u64)> = req.bindings.into_iter().map(|k| (k.id, k.known_version)).collect();
        let updates = p.poll_updates(u, &known)?;
        Ok(PollResponse {
            deltas: updates
                .deltas
                .into_iter()
                .map(|d| DeltaBody {
                    binding_id: d.binding_id,
                    from_version: d.from_version,
                    to_version: d.to_version,
                    image: encode_range_image(&d.image),
                })
                .collect(),
            revocations: updates.revocations,
        })
    })
    .await
}

async fn upload_workbook(
    State(s): State<AppState>,
    h: HeaderMap,
    Path(id): Path<String>,
    Json(req): Json<UploadRequest>,
) -> ApiResult<UploadResponse> {
    as_user(&s, &h, move |p, u| {
        let role = p.upload_workbook(u, &id, &req.document, &req.exports, &req.imports)?;
        Ok(UploadResponse { id, role })
    })
    .await
}

async fn workbook_info(State(s): State<AppState>, h: HeaderMap, Path(id): Path<String>) -> ApiResult<WorkbookInfo> {
    as_user(&s, &h, move |p, u| p.workbook_info(u, &id)).await
}

async fn delete_workbook(State(s): State<AppState>, h: HeaderMap, Path(id): Path<String>) -> ApiResult<Value> {
    as_user(&s, &h, move |p, u| p.delete_workbook(u, &id).map(|_| json!({"deleted": id}))).await
}

pub fn router(platform: Arc<Platform>, admin_token: Option<String>) -> Router {
    let state = AppState {
        platform,
        admin_token: admin_token.map(Arc::from),
    };
    Router::new()
        .route("/api/v1/healthz", get(healthz))
        .route("/api/v1/login", post(login))
        .route("/api/v1/admin/users", post(add_user).get(list_users))
        .route("/api/v1/admin/users/{id}", delete(remove_user))
        .route("/api/v1/spaces", post(create_space).get(list_spaces))
        .route("/api/v1/spaces/{id}", delete(delete_space))
        .route("/api/v1/spaces/{id}/members", post(add_member))
        .route("/api/v1/spaces/{id}/members/{user}", delete(remove_member))
        .route("/api/v1/exports", post(register_export).get(list_exports))
        .route(
            "/api/v1/exports/{id}",
            get(get_export).patch(update_export).delete(revoke_export),
        )
        .route(
            "/api/v1/exports/{id}/contribution",
            put(push_contribution).get(latest_contribution),
        )
        .route("/api/v1/imports", post(register_import).get(list_imports))
        .route("/api/v1/imports/{id}", delete(delete_import))
        .route("/api/v1/updates", post(poll_updates))
        .route(
            "/api/v1/workbooks/{id}",
            put(upload_workbook).get(workbook_info).delete(delete_workbook),
        )
        .with_state(state)
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
}

/// Opens the data directory and serves until `shutdown` resolves.
/// `on_ready` receives the bound address and the platform, before the first
/// request is accepted.
pub fn run<F>(
    config: &ServerConfig,
    on_ready: impl FnOnce(SocketAddr, &Arc<Platform>),
    shutdown: F,
) -> Result<(), ServeError>
where
    F: Future<Output = ()> + Send + 'static,
{
    let options = PlatformOptions {
        seed: None,
        propagation: PropagationMode::Deferred,
    };
    let platform = Arc::new(Platform::open(&config.data_dir, options)?);
    let worker = platform.spawn_worker(config.sweep_interval);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(config.workers)
        .enable_all()
        .build()
        .map_err(|e| ServeError::Io("runtime".into(), e))?;
    let result = runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&config.listen)
            .await
            .map_err(|e| ServeError::Io(config.listen.clone(), e))?;
        let addr = listener.local_addr().map_err(|e| ServeError::Io(config.listen.clone(), e))?;
        on_ready(addr, &platform);
        let app = router(platform.clone(), config.admin_token.clone());
        axum::serve(listener, app)
            .with_graceful_shutdown(shutdown)
            .await
            .map_err(|e| ServeError::Io(addr.to_string(), e))
    });
    platform.shutdown();
    let _ = worker.join();
    result
}
