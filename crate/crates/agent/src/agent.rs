use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use discom_core::composition::{
    classify_workbook, BindingId, ExportDescriptor, ExportId, ImportBinding, Visibility, WorkbookRole,
};
use discom_core::engine::{evaluate_all, recalculate, ChangeSet};
use discom_core::model::{
    decode_workbook, encode_workbook, AddressError, CellAddress, RangeImage, RangeRef, Workbook, WorkbookError,
    XmlError,
};
use discom_server::api::{NewExport, NewImport};
use discom_server::{PlatformError, UpdateDelta};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::{ApiError, PlatformApi};

/// Workbook property holding the agent's bookkeeping.
pub const META_PROPERTY: &str = "discom.agent";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("{addr} is imported through binding {binding} and is read-only")]
    ReadOnly { addr: CellAddress, binding: BindingId },
    #[error("no sheet named `{0}` in the workbook")]
    MissingSheet(String),
    #[error("unknown export {0}")]
    UnknownExport(ExportId),
    #[error(transparent)]
    Address(#[from] AddressError),
    #[error(transparent)]
    Workbook(#[from] WorkbookError),
    #[error(transparent)]
    Api(#[from] ApiError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Xml { path: PathBuf, source: XmlError },
    #[error("corrupt agent metadata: {0}")]
    Meta(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportState {
    pub name: String,
    pub range: RangeRef,
    /// Latest version the platform acknowledged for this export.
    pub acked_version: u64,
    pub last_pushed: Option<RangeImage>,
    /// Set after an unresolved conflict; pushes stop until resumed.
    pub paused: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportState {
    pub export_id: ExportId,
    pub target: RangeRef,
    pub applied_version: u64,
    /// The export was revoked; cells keep their last values.
    pub stale: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentMeta {
    pub exports: BTreeMap<ExportId, ExportState>,
    pub imports: BTreeMap<BindingId, ImportState>,
    /// Exports with unpushed changes, oldest first. The image pushed is
    /// always the current one, so repeated edits coalesce.
    pub pending: Vec<ExportId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TickReport {
    pub applied: Vec<(BindingId, u64)>,
    pub changed_cells: usize,
    pub revoked: Vec<BindingId>,
    pub pushed: Vec<(ExportId, u64)>,
    /// Conflicts resolved by adopting an identical platform image.
    pub adopted: Vec<(ExportId, u64)>,
    pub paused: Vec<(ExportId, String)>,
    pub uploaded: Option<WorkbookRole>,
    pub errors: Vec<String>,
    pub online: bool,
}

pub struct Agent<A> {
    api: A,
    workbook: Workbook,
    path: Option<PathBuf>,
    meta: AgentMeta,
    online: bool,
    last_upload: Option<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AgentError + '_ {
    move |source| AgentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl<A: PlatformApi> Agent<A> {
    /// Wraps an in-memory workbook; nothing is written to disk.
    pub fn new(api: A, mut workbook: Workbook) -> Result<Self, AgentError> {
        let meta = match workbook.properties.get(META_PROPERTY) {
            Some(json) => serde_json::from_str(json).map_err(|e| AgentError::Meta(e.to_string()))?,
            None => AgentMeta::default(),
        };
        evaluate_all(&mut workbook);
        Ok(Self {
            api,
            workbook,
            path: None,
            meta,
            online: true,
            last_upload: None,
        })
    }

    /// Loads `path`, or starts an empty workbook named after the file.
    pub fn open(api: A, path: impl Into<PathBuf>) -> Result<Self, AgentError> {
        let path = path.into();
        let workbook = if path.exists() {
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            decode_workbook(&text).map_err(|source| AgentError::Xml {
                path: path.clone(),
                source,
            })?
        } else {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("workbook");
            Workbook::new(stem)
        };
        let mut agent = Self::new(api, workbook)?;
        agent.path = Some(path);
        Ok(agent)
    }

    pub fn api(&self) -> &A {
        &self.api
    }

    pub fn workbook(&self) -> &Workbook {
        &self.workbook
    }

    pub fn meta(&self) -> &AgentMeta {
        &self.meta
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Whether the last platform call got through.
    pub fn is_online(&self) -> bool {
        self.online
    }

    /// Writes the workbook, metadata included, atomically.
    pub fn save(&mut self) -> Result<(), AgentError> {
        let json = serde_json::to_string(&self.meta).expect("metadata serializes");
        self.workbook.properties.insert(META_PROPERTY.into(), json);
        let Some(path) = &self.path else {
            return Ok(());
        };
        let tmp = path.with_extension("tmp");
        let mut file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        file.write_all(encode_workbook(&self.workbook).as_bytes())
            .and_then(|_| file.sync_all())
            .map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    /// The binding whose target covers `addr`, if any.
    pub fn import_covering(&self, addr: &CellAddress) -> Option<&BindingId> {
        self.meta
            .imports
            .iter()
            .find(|(_, s)| s.target.contains(addr))
            .map(|(id, _)| id)
    }

    /// A local edit: `=...` is a formula, anything else a literal.
    pub fn set_cell(&mut self, addr: &CellAddress, input: &str) -> Result<ChangeSet, AgentError> {
        if let Some(binding) = self.import_covering(addr) {
            return Err(AgentError::ReadOnly {
                addr: addr.clone(),
                binding: binding.clone(),
            });
        }
        self.workbook.set_input(addr, input)?;
        let addr = self.workbook.canonical_address(addr).unwrap_or_else(|| addr.clone());
        let changes = recalculate(&mut self.workbook, [&addr]);
        self.save()?;
        Ok(changes)
    }

    fn check_sheet(&self, range: &RangeRef) -> Result<(), AgentError> {
        match self.workbook.sheet(range.sheet()) {
            Some(_) => Ok(()),
            None => Err(AgentError::MissingSheet(range.sheet().to_string())),
        }
    }

    fn note_online<T>(&mut self, result: Result<T, ApiError>) -> Result<T, ApiError> {
        match &result {
            Ok(_) => self.online = true,
            Err(e) if matches!(e, ApiError::Unreachable(_)) => self.online = false,
            Err(_) => self.online = true,
        }
        result
    }

    /// Publishes a range of this workbook. The first image is pushed on
    /// the next tick.
    pub fn register_export(
        &mut self,
        space: &str,
        name: &str,
        description: &str,
        range: RangeRef,
        visibility: Visibility,
    ) -> Result<ExportDescriptor, AgentError> {
        self.check_sheet(&range)?;
        let new = NewExport {
            space: space.into(),
            name: name.into(),
            description: description.into(),
            range: range.clone(),
            visibility,
        };
        let result = self.api.register_export(&new);
        let descriptor = self.note_online(result)?;
        self.meta.exports.insert(
            descriptor.id.clone(),
            ExportState {
                name: descriptor.name.clone(),
                range,
                acked_version: descriptor.latest_version,
                last_pushed: None,
                paused: None,
            },
        );
        self.enqueue(&descriptor.id);
        self.save()?;
        Ok(descriptor)
    }

    /// Binds an export into `target`. Values arrive on the next tick.
    pub fn bind_import(&mut self, export_id: &str, target: RangeRef) -> Result<ImportBinding, AgentError> {
        let new = NewImport {
            export_id: export_id.into(),
            target: target.clone(),
        };
        let result = self.api.register_import(&new);
        let binding = self.note_online(result)?;
        self.workbook.ensure_sheet(target.sheet())?;
        self.meta.imports.insert(
            binding.id.clone(),
            ImportState {
                export_id: binding.export_id.clone(),
                target,
                applied_version: 0,
                stale: false,
                error: None,
            },
        );
        self.save()?;
        Ok(binding)
    }

    pub fn catalog(&mut self) -> Result<Vec<ExportDescriptor>, AgentError> {
        let result = self.api.catalog();
        Ok(self.note_online(result)?)
    }

    /// Clears a conflict pause; the next push overwrites the platform's
    /// latest version with the local image.
    pub fn resume_export(&mut self, export_id: &str) -> Result<(), AgentError> {
        let result = self.api.latest(export_id);
        let latest = self.note_online(result)?;
        let state = self
            .meta
            .exports
            .get_mut(export_id)
            .ok_or_else(|| AgentError::UnknownExport(export_id.into()))?;
        state.paused = None;
        state.acked_version = latest.map_or(state.acked_version, |i| i.version());
        self.enqueue(export_id);
        self.save()
    }

    fn enqueue(&mut self, export_id: &str) {
        if !self.meta.pending.iter().any(|p| p == export_id) {
            self.meta.pending.push(export_id.to_string());
        }
    }

    fn current_image(&self, export_id: &str) -> Option<RangeImage> {
        let state = self.meta.exports.get(export_id)?;
        self.workbook.range_image(&state.range, export_id, 0).ok()
    }

    /// Exports whose current values differ from the last acknowledged push.
    pub fn detect_modified_exports(&self) -> Vec<ExportId> {
        self.meta
            .exports
            .iter()
            .filter(|(id, s)| match (self.current_image(id), &s.last_pushed) {
                (Some(now), Some(last)) => !now.same_content(last),
                (Some(_), None) => true,
                (None, _) => false,
            })
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Writes a delta into its binding's target and recalculates. Deltas at
    /// or below the applied version, or for stale bindings, are ignored.
    pub fn apply_import(&mut self, delta: &UpdateDelta) -> Result<ChangeSet, AgentError> {
        let Some(state) = self.meta.imports.get_mut(&delta.binding_id) else {
            return Ok(ChangeSet::default());
        };
        if state.stale || delta.to_version <= state.applied_version {
            return Ok(ChangeSet::default());
        }
        if delta.image.dims() != state.target.dims() {
            let msg = format!(
                "image is {}x{} but target {} is {}x{}",
                delta.image.rows(),
                delta.image.cols(),
                state.target,
                state.target.rows(),
                state.target.cols()
            );
            state.error = Some(msg.clone());
            return Err(AgentError::Api(ApiError::Rejected(PlatformError::Integrity(msg))));
        }
        let target = state.target.clone();
        state.applied_version = delta.to_version;
        state.error = None;
        let written = self.workbook.write_image(&target, delta.image.cells())?;
        Ok(recalculate(&mut self.workbook, written.iter()))
    }

    fn poll_and_apply(&mut self, report: &mut TickReport) {
        let known: Vec<(BindingId, u64)> = self
            .meta
            .imports
            .iter()
            .filter(|(_, s)| !s.stale)
            .map(|(id, s)| (id.clone(), s.applied_version))
            .collect();
        if known.is_empty() {
            return;
        }
        let result = self.api.poll(&known);
        let updates = match self.note_online(result) {
            Ok(u) => u,
            Err(e) => {
                report.errors.push(format!("poll: {e}"));
                return;
            }
        };
        for delta in &updates.deltas {
            match self.apply_import(delta) {
                Ok(changes) => {
                    report.changed_cells += changes.len();
                    report.applied.push((delta.binding_id.clone(), delta.to_version));
                }
                Err(e) => report.errors.push(format!("binding {}: {e}", delta.binding_id)),
            }
        }
        for r in &updates.revocations {
            if let Some(state) = self.meta.imports.get_mut(&r.binding_id) {
                if !state.stale {
                    state.stale = true;
                    state.error = Some(r.reason.clone());
                    report.revoked.push(r.binding_id.clone());
                }
            }
        }
    }

    fn acknowledge(&mut self, export_id: &str, image: RangeImage, version: u64) {
        if let Some(state) = self.meta.exports.get_mut(export_id) {
            state.acked_version = version;
            state.last_pushed = Some(image.with_identity(export_id, version));
        }
        self.meta.pending.retain(|p| p != export_id);
    }

    /// Pushes one export; returns false when the platform is unreachable.
    fn push_one(&mut self, export_id: &str, report: &mut TickReport) -> bool {
        let Some(state) = self.meta.exports.get(export_id) else {
            self.meta.pending.retain(|p| p != export_id);
            return true;
        };
        if state.paused.is_some() {
            return true;
        }
        let base = state.acked_version;
        let Some(image) = self.current_image(export_id) else {
            report.errors.push(format!("export {export_id}: range no longer resolves"));
            return true;
        };
        let mut attempt = self.api.push(export_id, &image, base);
        for retry in 0..2 {
            match self.note_online(attempt) {
                Ok(version) => {
                    self.acknowledge(export_id, image, version);
                    report.pushed.push((export_id.to_string(), version));
                    return true;
                }
                Err(e) if e.is_transient() => {
                    report.errors.push(format!("push {export_id}: {e}"));
                    return !matches!(e, ApiError::Unreachable(_));
                }
                Err(ApiError::Rejected(PlatformError::Conflict { message, .. })) => {
                    if retry == 1 {
                        self.pause(export_id, message, report);
                        return true;
                    }
                    let latest = self.api.latest(export_id);
                    match self.note_online(latest) {
                        Ok(Some(theirs)) if theirs.same_content(&image) => {
                            let v = theirs.version();
                            self.acknowledge(export_id, image, v);
                            report.adopted.push((export_id.to_string(), v));
                            return true;
                        }
                        Ok(theirs) => {
                            let v = theirs.map_or(0, |i| i.version());
                            attempt = self.api.push(export_id, &image, v);
                        }
                        Err(e) => {
                            report.errors.push(format!("push {export_id}: {e}"));
                            return !matches!(e, ApiError::Unreachable(_));
                        }
                    }
                }
                Err(e) => {
                    self.pause(export_id, e.to_string(), report);
                    return true;
                }
            }
        }
        true
    }

    fn pause(&mut self, export_id: &str, reason: String, report: &mut TickReport) {
        if let Some(state) = self.meta.exports.get_mut(export_id) {
            state.paused = Some(reason.clone());
        }
        report.paused.push((export_id.to_string(), reason));
    }

    fn upload_if_intermediate(&mut self, report: &mut TickReport) {
        let exports: Vec<RangeRef> = self.meta.exports.values().map(|s| s.range.clone()).collect();
        let live: Vec<(&BindingId, &ImportState)> = self.meta.imports.iter().filter(|(_, s)| !s.stale).collect();
        let imports: Vec<RangeRef> = live.iter().map(|(_, s)| s.target.clone()).collect();
        match classify_workbook(&self.workbook, &exports, &imports) {
            Ok(WorkbookRole::Intermediate) => {}
            Ok(_) => return,
            Err(e) => {
                report.errors.push(format!("classify: {e}"));
                return;
            }
        }
        let mut plain = self.workbook.clone();
        plain.properties.clear();
        let document = encode_workbook(&plain);
        if self.last_upload.as_deref() == Some(document.as_str()) {
            return;
        }
        let export_ids: Vec<ExportId> = self.meta.exports.keys().cloned().collect();
        let binding_ids: Vec<BindingId> = live.iter().map(|(id, _)| (*id).clone()).collect();
        let id = self.workbook.id.0.clone();
        let result = self.api.upload(&id, &document, &export_ids, &binding_ids);
        match self.note_online(result) {
            Ok(role) => {
                self.last_upload = Some(document);
                report.uploaded = Some(role);
            }
            Err(e) => report.errors.push(format!("upload: {e}")),
        }
    }

    /// One synchronization cycle: poll and apply imports, detect changed
    /// exports, flush the queue, then re-host the workbook if it is an
    /// intermediate.
    pub fn tick(&mut self) -> Result<TickReport, AgentError> {
        let before = self.meta.clone();
        let mut report = TickReport::default();
        self.poll_and_apply(&mut report);
        for id in self.detect_modified_exports() {
            self.enqueue(&id);
        }
        let queue = self.meta.pending.clone();
        for id in queue {
            if !self.push_one(&id, &mut report) {
                break;
            }
        }
        if self.online {
            self.upload_if_intermediate(&mut report);
        }
        report.online = self.online;
        if self.meta != before || report.changed_cells > 0 {
            self.save()?;
        }
        Ok(report)
    }
}
