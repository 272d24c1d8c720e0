use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{BindingId, ExportId, SpaceId, UserId};
use crate::model::RangeRef;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "users", rename_all = "snake_case")]
pub enum Visibility {
    SpaceWide,
    Restricted(BTreeSet<UserId>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportDescriptor {
    pub id: ExportId,
    pub owner: UserId,
    pub space: SpaceId,
    pub name: String,
    pub description: String,
    /// Owner-local coordinates.
    pub range: RangeRef,
    pub visibility: Visibility,
    /// 0 until the first contribution is committed.
    pub latest_version: u64,
    #[serde(default)]
    pub revoked: bool,
}

impl ExportDescriptor {
    pub fn dims(&self) -> (u32, u32) {
        self.range.dims()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportBinding {
    pub id: BindingId,
    pub importer: UserId,
    pub export_id: ExportId,
    /// Importer-local coordinates; same dimensions as the export range.
    pub target: RangeRef,
    pub applied_version: u64,
}

pub fn next_version(export: &ExportDescriptor) -> u64 {
    export.latest_version + 1
}
