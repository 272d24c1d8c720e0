//! Everything the platform persists, as one serializable value.

use std::collections::BTreeMap;

use discom_core::composition::{
    BindingId, ExportDescriptor, ExportId, ImportBinding, Space, SpaceId, User, UserId,
};
use discom_core::model::{decode_range_image, decode_workbook, RangeImage};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Author {
    Owner,
    Platform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredVersion {
    pub version: u64,
    pub authored_by: Author,
    /// Canonical range-image XML.
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub descriptor: ExportDescriptor,
    /// Versions `1..=latest_version`, in order.
    pub versions: Vec<StoredVersion>,
}

impl ExportRecord {
    pub fn latest(&self) -> Option<&StoredVersion> {
        self.versions.last()
    }

    pub fn latest_image(&self) -> Option<RangeImage> {
        self.latest()
            .map(|v| decode_range_image(&v.image).expect("images are validated on load and commit"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostedWorkbook {
    pub id: String,
    pub owner: UserId,
    /// Workbook XML as last uploaded or propagated.
    pub document: String,
    pub exports: Vec<ExportId>,
    pub imports: Vec<BindingId>,
    /// Imported export id -> version last written into the document.
    pub last_propagated_versions: BTreeMap<ExportId, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub space: u64,
    pub export: u64,
    pub import: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlatformState {
    pub counters: Counters,
    pub users: BTreeMap<UserId, User>,
    /// Bearer token -> user.
    pub sessions: BTreeMap<String, UserId>,
    pub spaces: BTreeMap<SpaceId, Space>,
    pub exports: BTreeMap<ExportId, ExportRecord>,
    pub imports: BTreeMap<BindingId, ImportBinding>,
    pub workbooks: BTreeMap<String, HostedWorkbook>,
}

impl PlatformState {
    /// Structural checks run after loading a snapshot. The error names the
    /// first damaged record.
    pub fn validate(&self) -> Result<(), String> {
        for (id, rec) in &self.exports {
            if rec.descriptor.id != *id {
                return Err(format!("export {id}: descriptor id mismatch"));
            }
            if rec.descriptor.latest_version != rec.versions.len() as u64 {
                return Err(format!(
                    "export {id}: latest_version {} but {} stored versions",
                    rec.descriptor.latest_version,
                    rec.versions.len()
                ));
            }
            let (rows, cols) = rec.descriptor.range.dims();
            for (i, v) in rec.versions.iter().enumerate() {
                if v.version != i as u64 + 1 {
                    return Err(format!("export {id}: version {} out of sequence", v.version));
                }
                let image = decode_range_image(&v.image)
                    .map_err(|e| format!("export {id} version {}: {e}", v.version))?;
                if image.version() != v.version || image.export_id() != id || image.dims() != (rows, cols) {
                    return Err(format!("export {id} version {}: image header mismatch", v.version));
                }
            }
        }
        for (id, b) in &self.imports {
            if !self.exports.contains_key(&b.export_id) {
                return Err(format!("import {id}: unknown export {}", b.export_id));
            }
        }
        for (id, w) in &self.workbooks {
            decode_workbook(&w.document).map_err(|e| format!("workbook {id}: {e}"))?;
        }
        Ok(())
    }

    pub fn export(&self, id: &str) -> Option<&ExportRecord> {
        self.exports.get(id)
    }

    /// Hosted workbooks with a binding on `export_id`.
    pub fn importers_of(&self, export_id: &str) -> Vec<String> {
        self.workbooks
            .values()
            .filter(|w| {
                w.imports
                    .iter()
                    .any(|b| self.imports.get(b).is_some_and(|b| b.export_id == export_id))
            })
            .map(|w| w.id.clone())
            .collect()
    }
}
