//! Blocking HTTP client for the platform API.

use std::time::Duration;

use discom_core::composition::{
    BindingId, ExportDescriptor, ExportId, ImportBinding, MemberRole, Space, WorkbookRole,
};
use discom_core::model::{decode_range_image, encode_range_image, RangeImage};
use discom_server::api::*;
use discom_server::{PlatformError, UpdateDelta, Updates};
use reqwest::blocking::Client;
use reqwest::Method;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::api::{ApiError, ApiResult, PlatformApi};

#[derive(Debug, Clone)]
pub struct HttpClient {
    base: String,
    token: Option<String>,
    http: Client,
}

fn rejected(status: u16, body: &str) -> ApiError {
    let parsed: Option<ErrorBody> = serde_json::from_str(body).ok();
    let message = parsed.as_ref().map_or_else(|| body.trim().to_string(), |b| b.error.clone());
    let kind = parsed.as_ref().map(|b| b.kind.as_str()).unwrap_or("");
    let err = match (status, kind) {
        (401, _) => PlatformError::Unauthenticated,
        (403, _) => PlatformError::Forbidden(message),
        (404, _) => PlatformError::NotFound(message),
        (409, _) => PlatformError::Conflict {
            message,
            latest_version: parsed.and_then(|b| b.latest_version),
        },
        (422, "precondition") => PlatformError::Precondition(message),
        (400..=499, _) => PlatformError::Integrity(message),
        _ => PlatformError::Storage(format!("HTTP {status}: {message}")),
    };
    ApiError::Rejected(err)
}

impl HttpClient {
    /// `server` is the platform root, e.g. `http://127.0.0.1:7878`.
    pub fn new(server: &str, token: Option<String>) -> Self {
        let http = Client::builder()
            .timeout(Duration::from_secs(10))
            .build()
            .expect("http client");
        Self {
            base: format!("{}/api/v1", server.trim_end_matches('/')),
            token,
            http,
        }
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    fn call<T: DeserializeOwned>(&self, method: Method, path: &str, body: Option<&impl Serialize>) -> ApiResult<T> {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().map_err(|e| ApiError::Unreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| ApiError::Unreachable(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(rejected(status, &text));
        }
        serde_json::from_str(&text)
            .map_err(|e| ApiError::Rejected(PlatformError::Storage(format!("unexpected response: {e}"))))
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> ApiResult<T> {
        self.call(Method::GET, path, None::<&()>)
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: &impl Serialize) -> ApiResult<T> {
        self.call(Method::POST, path, Some(body))
    }

    fn delete<T: DeserializeOwned>(&self, path: &str) -> ApiResult<T> {
        self.call(Method::DELETE, path, None::<&()>)
    }

    pub fn healthz(&self) -> ApiResult<Value> {
        self.get("/healthz")
    }

    pub fn login(&self, user: &str, secret: &str) -> ApiResult<String> {
        let r: LoginResponse = self.post(
            "/login",
            &LoginRequest {
                user: user.into(),
                secret: secret.into(),
            },
        )?;
        Ok(r.token)
    }

    pub fn add_user(&self, new: &NewUser) -> ApiResult<UserInfo> {
        self.post("/admin/users", new)
    }

    pub fn list_users(&self) -> ApiResult<Vec<UserInfo>> {
        self.get("/admin/users")
    }

    pub fn remove_user(&self, id: &str) -> ApiResult<Value> {
        self.delete(&format!("/admin/users/{id}"))
    }

    pub fn create_space(&self, name: &str) -> ApiResult<Space> {
        self.post("/spaces", &NewSpace { name: name.into() })
    }

    pub fn list_spaces(&self) -> ApiResult<Vec<Space>> {
        self.get("/spaces")
    }

    pub fn add_member(&self, space: &str, user: &str, role: MemberRole) -> ApiResult<Space> {
        self.post(
            &format!("/spaces/{space}/members"),
            &NewMember {
                user: user.into(),
                role,
            },
        )
    }

    pub fn remove_member(&self, space: &str, user: &str) -> ApiResult<Space> {
        self.delete(&format!("/spaces/{space}/members/{user}"))
    }

    pub fn list_exports(&self) -> ApiResult<Vec<ExportDescriptor>> {
        self.get("/exports")
    }

    pub fn get_export(&self, id: &str) -> ApiResult<ExportDescriptor> {
        self.get(&format!("/exports/{id}"))
    }

    pub fn update_export(&self, id: &str, patch: &ExportPatch) -> ApiResult<ExportDescriptor> {
        self.call(Method::PATCH, &format!("/exports/{id}"), Some(patch))
    }

    pub fn revoke_export(&self, id: &str) -> ApiResult<ExportDescriptor> {
        self.delete(&format!("/exports/{id}"))
    }

    pub fn list_imports(&self) -> ApiResult<Vec<ImportBinding>> {
        self.get("/imports")
    }

    pub fn delete_import(&self, id: &str) -> ApiResult<Value> {
        self.delete(&format!("/imports/{id}"))
    }

    pub fn workbook_info(&self, id: &str) -> ApiResult<WorkbookInfo> {
        self.get(&format!("/workbooks/{id}"))
    }
}

fn bad_image(e: impl std::fmt::Display) -> ApiError {
    ApiError::Rejected(PlatformError::Integrity(format!("malformed image from platform: {e}")))
}

impl PlatformApi for HttpClient {
    fn poll(&self, known: &[(BindingId, u64)]) -> ApiResult<Updates> {
        let req = PollRequest {
            bindings: known
                .iter()
                .map(|(id, v)| KnownVersion {
                    id: id.clone(),
                    known_version: *v,
                })
                .collect(),
        };
        let resp: PollResponse = self.post("/updates", &req)?;
        let mut deltas = Vec::new();
        for d in resp.deltas {
            deltas.push(UpdateDelta {
                binding_id: d.binding_id,
                image: decode_range_image(&d.image).map_err(bad_image)?,
                from_version: d.from_version,
                to_version: d.to_version,
            });
        }
        Ok(Updates {
            deltas,
            revocations: resp.revocations,
        })
    }

    fn push(&self, export_id: &str, image: &RangeImage, base_version: u64) -> ApiResult<u64> {
        let req = PushRequest {
            base_version,
            image: encode_range_image(image),
        };
        let resp: PushResponse = self.call(Method::PUT, &format!("/exports/{export_id}/contribution"), Some(&req))?;
        Ok(resp.version)
    }

    fn latest(&self, export_id: &str) -> ApiResult<Option<RangeImage>> {
        let resp: Option<Contribution> = self.get(&format!("/exports/{export_id}/contribution"))?;
        resp.map(|c| decode_range_image(&c.image).map_err(bad_image)).transpose()
    }

    fn upload(
        &self,
        workbook_id: &str,
        document: &str,
        exports: &[ExportId],
        imports: &[BindingId],
    ) -> ApiResult<WorkbookRole> {
        let req = UploadRequest {
            document: document.into(),
            exports: exports.to_vec(),
            imports: imports.to_vec(),
        };
        let resp: UploadResponse = self.call(Method::PUT, &format!("/workbooks/{workbook_id}"), Some(&req))?;
        Ok(resp.role)
    }

    fn register_export(&self, new: &NewExport) -> ApiResult<ExportDescriptor> {
        self.post("/exports", new)
    }

    fn register_import(&self, new: &NewImport) -> ApiResult<ImportBinding> {
        self.post("/imports", new)
    }

    fn catalog(&self) -> ApiResult<Vec<ExportDescriptor>> {
        self.list_exports()
    }
}
