//! JSON request and response bodies. Range images and workbooks travel as
//! canonical XML strings.

use std::collections::BTreeMap;

use discom_core::composition::{
    BindingId, ExportId, MemberRole, SpaceId, UserId, Visibility, WorkbookRole,
};
use discom_core::model::RangeRef;
use serde::{Deserialize, Serialize};

use crate::state::Author;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoginRequest {
    pub user: UserId,
    pub secret: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoginResponse {
    pub token: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewUser {
    pub id: UserId,
    #[serde(default)]
    pub name: String,
    pub secret: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserInfo {
    pub id: UserId,
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewSpace {
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewMember {
    pub user: UserId,
    pub role: MemberRole,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewExport {
    pub space: SpaceId,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub range: RangeRef,
    pub visibility: Visibility,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExportPatch {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub visibility: Option<Visibility>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PushRequest {
    pub base_version: u64,
    pub image: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PushResponse {
    pub version: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Contribution {
    pub version: u64,
    pub authored_by: Author,
    pub image: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewImport {
    pub export_id: ExportId,
    pub target: RangeRef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnownVersion {
    pub id: BindingId,
    pub known_version: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PollRequest {
    pub bindings: Vec<KnownVersion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaBody {
    pub binding_id: BindingId,
    pub from_version: u64,
    pub to_version: u64,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Revocation {
    pub binding_id: BindingId,
    pub export_id: ExportId,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PollResponse {
    pub deltas: Vec<DeltaBody>,
    pub revocations: Vec<Revocation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UploadRequest {
    pub document: String,
    pub exports: Vec<ExportId>,
    pub imports: Vec<BindingId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UploadResponse {
    pub id: String,
    pub role: WorkbookRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkbookInfo {
    pub id: String,
    pub owner: UserId,
    pub exports: Vec<ExportId>,
    pub imports: Vec<BindingId>,
    pub last_propagated_versions: BTreeMap<ExportId, u64>,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latest_version: Option<u64>,
}
