//! The platform service, independent of any transport.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::thread::JoinHandle;
use std::time::Duration;

use discom_core::composition::{
    authorize, classify_workbook, next_version, BindingId, Credential, ExportDescriptor, ExportId,
    ImportBinding, MemberRole, Space, User, UserId, Visibility, WorkbookRole,
};
use discom_core::model::{decode_workbook, encode_range_image, encode_workbook, RangeImage, RangeRef};
use parking_lot::{Condvar, Mutex, RwLock, RwLockReadGuard};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::api::{ExportPatch, NewExport, NewImport, NewUser, Revocation, UserInfo, WorkbookInfo};
use crate::error::{PlatformError, Result};
use crate::propagate::{propagate_in, topology, Topology};
use crate::state::{Author, ExportRecord, HostedWorkbook, PlatformState, StoredVersion};
use crate::store::{Store, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagationMode {
    /// Every commit drains the propagation queue before returning.
    Inline,
    /// Work is queued for `drain` or a background worker.
    Deferred,
}

#[derive(Debug, Clone)]
pub struct PlatformOptions {
    /// Seeds token and salt generation; entropy when absent.
    pub seed: Option<u64>,
    pub propagation: PropagationMode,
}

impl Default for PlatformOptions {
    fn default() -> Self {
        Self {
            seed: None,
            propagation: PropagationMode::Inline,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateDelta {
    pub binding_id: BindingId,
    pub image: RangeImage,
    pub from_version: u64,
    pub to_version: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Updates {
    pub deltas: Vec<UpdateDelta>,
    pub revocations: Vec<Revocation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatestContribution {
    pub image: RangeImage,
    pub authored_by: Author,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DrainReport {
    pub committed: Vec<(ExportId, u64)>,
    /// Workbook id and diagnostic, for workbooks skipped or failed.
    pub diagnostics: Vec<(String, String)>,
}

pub struct Platform {
    state: RwLock<PlatformState>,
    store: Option<Store>,
    rng: Mutex<StdRng>,
    mode: PropagationMode,
    queue: Mutex<BTreeSet<String>>,
    wake: Condvar,
    drain_lock: Mutex<()>,
    /// Bumped whenever the cross-workbook graph may have changed.
    generation: AtomicU64,
    diagnostics: Mutex<BTreeMap<String, String>>,
    crashed: AtomicBool,
    stopping: AtomicBool,
}

fn not_found(what: &str, id: &str) -> PlatformError {
    PlatformError::NotFound(format!("{what} {id}"))
}

fn space_of<'a>(state: &'a PlatformState, id: &str) -> Result<&'a Space> {
    state.spaces.get(id).ok_or_else(|| not_found("space", id))
}

fn check_restricted(space: &Space, visibility: &Visibility) -> Result<()> {
    if let Visibility::Restricted(users) = visibility {
        if let Some(u) = users.iter().find(|u| !space.is_member(u)) {
            return Err(PlatformError::Integrity(format!(
                "restricted reader {u} is not a member of space {}",
                space.id
            )));
        }
    }
    Ok(())
}

fn can_read(state: &PlatformState, user: &str, export: &ExportDescriptor) -> bool {
    state
        .spaces
        .get(&export.space)
        .is_some_and(|s| authorize(user, export, s).is_permit())
}

impl Platform {
    pub fn in_memory(options: PlatformOptions) -> Self {
        Self::build(PlatformState::default(), None, options)
    }

    /// Loads (or creates) the snapshot in `dir`. Workbooks found there are
    /// queued for propagation, catching up on work lost in a crash.
    pub fn open(dir: impl Into<PathBuf>, options: PlatformOptions) -> Result<Self, StoreError> {
        let (store, state) = Store::open(dir)?;
        let platform = Self::build(state, Some(store), options);
        let ids: Vec<String> = platform.state.read().workbooks.keys().cloned().collect();
        platform.queue.lock().extend(ids);
        Ok(platform)
    }

    fn build(state: PlatformState, store: Option<Store>, options: PlatformOptions) -> Self {
        let rng = match options.seed {
            Some(seed) => StdRng::seed_from_u64(seed),
            None => StdRng::from_entropy(),
        };
        Self {
            state: RwLock::new(state),
            store,
            rng: Mutex::new(rng),
            mode: options.propagation,
            queue: Mutex::new(BTreeSet::new()),
            wake: Condvar::new(),
            drain_lock: Mutex::new(()),
            generation: AtomicU64::new(0),
            diagnostics: Mutex::new(BTreeMap::new()),
            crashed: AtomicBool::new(false),
            stopping: AtomicBool::new(false),
        }
    }

    pub fn store(&self) -> Option<&Store> {
        self.store.as_ref()
    }

    /// A copy of the full state.
    pub fn snapshot(&self) -> PlatformState {
        self.state.read().clone()
    }

    fn alive(&self) -> Result<()> {
        if self.crashed.load(Ordering::SeqCst) {
            return Err(PlatformError::Storage("platform halted after a storage failure".into()));
        }
        Ok(())
    }

    fn read(&self) -> Result<RwLockReadGuard<'_, PlatformState>> {
        self.alive()?;
        Ok(self.state.read())
    }

    /// Applies `f` to a copy of the state, persists the copy, then
    /// publishes it. Nothing is visible unless the snapshot is durable.
    fn mutate<T>(&self, f: impl FnOnce(&mut PlatformState) -> Result<T>) -> Result<T> {
        self.alive()?;
        let mut guard = self.state.write();
        let mut next = guard.clone();
        let out = f(&mut next)?;
        if let Some(store) = &self.store {
            if let Err(e) = store.save(&next) {
                if matches!(e, StoreError::Injected(_)) {
                    self.crashed.store(true, Ordering::SeqCst);
                }
                return Err(PlatformError::Storage(e.to_string()));
            }
        }
        *guard = next;
        Ok(out)
    }

    fn random_hex(&self, bytes: usize) -> String {
        let mut rng = self.rng.lock();
        (0..bytes).map(|_| format!("{:02x}", rng.gen::<u8>())).collect()
    }

    // ---- accounts ----------------------------------------------------

    pub fn add_user(&self, new: NewUser) -> Result<UserInfo> {
        if new.id.is_empty() || new.id.chars().any(char::is_whitespace) {
            return Err(PlatformError::Integrity(format!("invalid user id `{}`", new.id)));
        }
        let salt = self.random_hex(8);
        self.mutate(|st| {
            if st.users.contains_key(&new.id) {
                return Err(PlatformError::conflict(format!("user {} already exists", new.id)));
            }
            let name = if new.name.is_empty() { new.id.clone() } else { new.name.clone() };
            st.users.insert(
                new.id.clone(),
                User {
                    id: new.id.clone(),
                    name: name.clone(),
                    credential: Credential::derive(&new.secret, &salt),
                },
            );
            Ok(UserInfo { id: new.id, name })
        })
    }

    pub fn list_users(&self) -> Result<Vec<UserInfo>> {
        Ok(self
            .read()?
            .users
            .values()
            .map(|u| UserInfo {
                id: u.id.clone(),
                name: u.name.clone(),
            })
            .collect())
    }

    /// Removes an account: its sessions end, it leaves every space, its
    /// exports are revoked and its hosted workbooks dropped.
    pub fn remove_user(&self, id: &str) -> Result<()> {
        self.mutate(|st| {
            if st.users.remove(id).is_none() {
                return Err(not_found("user", id));
            }
            if let Some(s) = st.spaces.values().find(|s| s.creator == id) {
                return Err(PlatformError::Precondition(format!(
                    "user {id} created space {}; delete it first",
                    s.id
                )));
            }
            st.sessions.retain(|_, u| u != id);
            for s in st.spaces.values_mut() {
                s.members.remove(id);
            }
            for rec in st.exports.values_mut() {
                if let Visibility::Restricted(r) = &mut rec.descriptor.visibility {
                    r.remove(id);
                }
                if rec.descriptor.owner == id {
                    rec.descriptor.revoked = true;
                }
            }
            st.workbooks.retain(|_, w| w.owner != id);
            Ok(())
        })?;
        self.generation.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }

    pub fn login(&self, user: &str, secret: &str) -> Result<String> {
        let token = self.random_hex(24);
        self.mutate(|st| {
            let ok = st.users.get(user).is_some_and(|u| u.credential.verify(secret));
            if !ok {
                return Err(PlatformError::Unauthenticated);
            }
            st.sessions.insert(token.clone(), user.to_string());
            Ok(token)
        })
    }

    pub fn authenticate(&self, token: &str) -> Result<UserId> {
        self.read()?
            .sessions
            .get(token)
            .cloned()
            .ok_or(PlatformError::Unauthenticated)
    }

    // ---- spaces --------------------------------------------------------

    pub fn create_space(&self, caller: &str, name: &str) -> Result<Space> {
        if name.trim().is_empty() {
            return Err(PlatformError::Integrity("space name must not be empty".into()));
        }
        self.mutate(|st| {
            if !st.users.contains_key(caller) {
                return Err(not_found("user", caller));
            }
            if st.spaces.values().any(|s| s.creator == caller && s.name == name) {
                return Err(PlatformError::conflict(format!("you already have a space named `{name}`")));
            }
            st.counters.space += 1;
            let space = Space::new(format!("sp-{}", st.counters.space), name, caller);
            st.spaces.insert(space.id.clone(), space.clone());
            Ok(space)
        })
    }

    /// Spaces the caller belongs to.
    pub fn list_spaces(&self, caller: &str) -> Result<Vec<Space>> {
        Ok(self
            .read()?
            .spaces
            .values()
            .filter(|s| s.is_member(caller))
            .cloned()
            .collect())
    }

    pub fn add_member(&self, caller: &str, space: &str, user: &str, role: MemberRole) -> Result<Space> {
        self.mutate(|st| {
            if !st.users.contains_key(user) {
                return Err(not_found("user", user));
            }
            let s = st.spaces.get_mut(space).ok_or_else(|| not_found("space", space))?;
            s.add_member(caller, user, role).map_err(|e| match e {
                discom_core::composition::SpaceError::NotCreator => PlatformError::Forbidden(e.to_string()),
                _ => PlatformError::Integrity(e.to_string()),
            })?;
            Ok(s.clone())
        })
    }

    /// Removes a member and strips them from every restricted reader list
    /// in the space.
    pub fn remove_member(&self, caller: &str, space: &str, user: &str) -> Result<Space> {
        self.mutate(|st| {
            let s = st.spaces.get_mut(space).ok_or_else(|| not_found("space", space))?;
            let removed = s.remove_member(caller, user).map_err(|e| match e {
                discom_core::composition::SpaceError::NotCreator => PlatformError::Forbidden(e.to_string()),
                _ => PlatformError::Integrity(e.to_string()),
            })?;
            if !removed {
                return Err(PlatformError::NotFound(format!("{user} is not a member of {space}")));
            }
            let s = s.clone();
            for rec in st.exports.values_mut().filter(|r| r.descriptor.space == space) {
                if let Visibility::Restricted(r) = &mut rec.descriptor.visibility {
                    r.remove(user);
                }
            }
            Ok(s)
        })
    }

    pub fn delete_space(&self, caller: &str, space: &str) -> Result<()> {
        self.mutate(|st| {
            let s = space_of(st, space)?;
            if s.creator != caller {
                return Err(PlatformError::Forbidden("only the space creator may delete it".into()));
            }
            if st.exports.values().any(|r| r.descriptor.space == space && !r.descriptor.revoked) {
                return Err(PlatformError::Precondition(format!("space {space} still has live exports")));
            }
            st.spaces.remove(space);
            Ok(())
        })
    }

    // ---- exports -------------------------------------------------------

    pub fn register_export(&self, caller: &str, new: NewExport) -> Result<ExportDescriptor> {
        if new.name.trim().is_empty() {
            return Err(PlatformError::Integrity("export name must not be empty".into()));
        }
        self.mutate(|st| {
            let space = space_of(st, &new.space)?;
            match space.role_of(caller) {
                None => return Err(PlatformError::Forbidden(format!("not a member of space {}", new.space))),
                Some(MemberRole::Importer) => {
                    return Err(PlatformError::Forbidden(format!("importer role in {} cannot export", new.space)))
                }
                Some(_) => {}
            }
            check_restricted(space, &new.visibility)?;
            st.counters.export += 1;
            let descriptor = ExportDescriptor {
                id: format!("ex-{}", st.counters.export),
                owner: caller.to_string(),
                space: new.space,
                name: new.name,
                description: new.description,
                range: new.range,
                visibility: new.visibility,
                latest_version: 0,
                revoked: false,
            };
            st.exports.insert(
                descriptor.id.clone(),
                ExportRecord {
                    descriptor: descriptor.clone(),
                    versions: Vec::new(),
                },
            );
            Ok(descriptor)
        })
    }

    /// The caller's catalog: every live export they may read, plus their own
    /// revoked ones.
    pub fn list_exports(&self, caller: &str) -> Result<Vec<ExportDescriptor>> {
        let st = self.read()?;
        Ok(st
            .exports
            .values()
            .map(|r| &r.descriptor)
            .filter(|d| d.owner == caller || (!d.revoked && can_read(&st, caller, d)))
            .cloned()
            .collect())
    }

    pub fn get_export(&self, caller: &str, id: &str) -> Result<ExportDescriptor> {
        let st = self.read()?;
        let rec = st.export(id).ok_or_else(|| not_found("export", id))?;
        if !can_read(&st, caller, &rec.descriptor) {
            return Err(PlatformError::Forbidden(format!("export {id} is not visible to you")));
        }
        Ok(rec.descriptor.clone())
    }

    pub fn update_export(&self, caller: &str, id: &str, patch: ExportPatch) -> Result<ExportDescriptor> {
        let out = self.mutate(|st| {
            let rec = st.exports.get(id).ok_or_else(|| not_found("export", id))?;
            if rec.descriptor.owner != caller {
                return Err(PlatformError::Forbidden(format!("only the owner may update export {id}")));
            }
            if let Some(v) = &patch.visibility {
                check_restricted(space_of(st, &rec.descriptor.space)?, v)?;
            }
            let d = &mut st.exports.get_mut(id).expect("checked").descriptor;
            if let Some(name) = patch.name {
                if name.trim().is_empty() {
                    return Err(PlatformError::Integrity("export name must not be empty".into()));
                }
                d.name = name;
            }
            if let Some(description) = patch.description {
                d.description = description;
            }
            if let Some(v) = patch.visibility {
                d.visibility = v;
            }
            Ok(d.clone())
        })?;
        self.generation.fetch_add(1, Ordering::SeqCst);
        Ok(out)
    }

    /// Deleting an export revokes it: stored versions stay, importers are
    /// told on their next poll and keep their last image.
    pub fn revoke_export(&self, caller: &str, id: &str) -> Result<ExportDescriptor> {
        self.mutate(|st| {
            let rec = st.exports.get_mut(id).ok_or_else(|| not_found("export", id))?;
            if rec.descriptor.owner != caller {
                return Err(PlatformError::Forbidden(format!("only the owner may revoke export {id}")));
            }
            rec.descriptor.revoked = true;
            Ok(rec.descriptor.clone())
        })
    }

    /// Commits `image` as the next version if `base_version` is current.
    pub fn push_contribution(&self, caller: &str, id: &str, image: &RangeImage, base_version: u64) -> Result<u64> {
        let version = self.mutate(|st| {
            let rec = st.exports.get_mut(id).ok_or_else(|| not_found("export", id))?;
            let d = &rec.descriptor;
            if d.owner != caller {
                return Err(PlatformError::Forbidden(format!("export {id} belongs to {}", d.owner)));
            }
            if d.revoked {
                return Err(PlatformError::Precondition(format!("export {id} has been revoked")));
            }
            if image.dims() != d.dims() {
                return Err(PlatformError::Integrity(format!(
                    "image is {}x{} but export {id} is {}x{}",
                    image.rows(),
                    image.cols(),
                    d.range.rows(),
                    d.range.cols()
                )));
            }
            if base_version != d.latest_version {
                return Err(PlatformError::stale(d.latest_version));
            }
            let version = next_version(d);
            rec.versions.push(StoredVersion {
                version,
                authored_by: Author::Owner,
                image: encode_range_image(&image.clone().with_identity(id, version)),
            });
            rec.descriptor.latest_version = version;
            Ok(version)
        })?;
        self.schedule_importers_of([id]);
        Ok(version)
    }

    pub fn latest_contribution(&self, caller: &str, id: &str) -> Result<Option<LatestContribution>> {
        let st = self.read()?;
        let rec = st.export(id).ok_or_else(|| not_found("export", id))?;
        if !can_read(&st, caller, &rec.descriptor) {
            return Err(PlatformError::Forbidden(format!("export {id} is not visible to you")));
        }
        Ok(rec.latest().map(|v| LatestContribution {
            image: rec.latest_image().expect("latest exists"),
            authored_by: v.authored_by,
        }))
    }

    // ---- imports -------------------------------------------------------

    pub fn register_import(&self, caller: &str, new: NewImport) -> Result<ImportBinding> {
        self.mutate(|st| {
            let rec = st.export(&new.export_id).ok_or_else(|| not_found("export", &new.export_id))?;
            if !can_read(st, caller, &rec.descriptor) {
                return Err(PlatformError::Forbidden(format!("export {} is not visible to you", new.export_id)));
            }
            if rec.descriptor.revoked {
                return Err(PlatformError::Precondition(format!("export {} has been revoked", new.export_id)));
            }
            if new.target.dims() != rec.descriptor.dims() {
                let (r, c) = rec.descriptor.dims();
                return Err(PlatformError::Integrity(format!(
                    "target {} is {}x{} but export {} is {r}x{c}",
                    new.target,
                    new.target.rows(),
                    new.target.cols(),
                    new.export_id
                )));
            }
            st.counters.import += 1;
            let binding = ImportBinding {
                id: format!("im-{}", st.counters.import),
                importer: caller.to_string(),
                export_id: new.export_id,
                target: new.target,
                applied_version: 0,
            };
            st.imports.insert(binding.id.clone(), binding.clone());
            Ok(binding)
        })
    }

    pub fn list_imports(&self, caller: &str) -> Result<Vec<ImportBinding>> {
        Ok(self
            .read()?
            .imports
            .values()
            .filter(|b| b.importer == caller)
            .cloned()
            .collect())
    }

    pub fn delete_import(&self, caller: &str, id: &str) -> Result<()> {
        self.mutate(|st| {
            match st.imports.get(id) {
                Some(b) if b.importer == caller => {}
                _ => return Err(not_found("import", id)),
            }
            st.imports.remove(id);
            Ok(())
        })?;
        self.generation.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }

    /// Latest image for each binding that is behind. Bindings whose export
    /// was revoked, or that the caller may no longer read, yield a
    /// revocation notice instead. `known_version` is taken as the version
    /// the caller has applied.
    pub fn poll_updates(&self, caller: &str, known: &[(BindingId, u64)]) -> Result<Updates> {
        let mut out = Updates::default();
        let mut acks = Vec::new();
        {
            let st = self.read()?;
            for (bid, known_version) in known {
                let b = st
                    .imports
                    .get(bid)
                    .filter(|b| b.importer == caller)
                    .ok_or_else(|| not_found("import", bid))?;
                let rec = st.export(&b.export_id).expect("validated binding");
                let reason = if rec.descriptor.revoked {
                    Some("export revoked")
                } else if !can_read(&st, caller, &rec.descriptor) {
                    Some("access withdrawn")
                } else {
                    None
                };
                if let Some(reason) = reason {
                    out.revocations.push(Revocation {
                        binding_id: bid.clone(),
                        export_id: b.export_id.clone(),
                        reason: reason.into(),
                    });
                    continue;
                }
                let latest = rec.descriptor.latest_version;
                let acked = (*known_version).min(latest);
                if acked > b.applied_version {
                    acks.push((bid.clone(), acked));
                }
                if latest > *known_version {
                    out.deltas.push(UpdateDelta {
                        binding_id: bid.clone(),
                        image: rec.latest_image().expect("latest exists"),
                        from_version: *known_version,
                        to_version: latest,
                    });
                }
            }
        }
        if !acks.is_empty() {
            self.mutate(|st| {
                for (bid, v) in &acks {
                    if let Some(b) = st.imports.get_mut(bid) {
                        b.applied_version = b.applied_version.max(*v);
                    }
                }
                Ok(())
            })?;
        }
        Ok(out)
    }

    // ---- hosted workbooks ---------------------------------------------

    /// Stores an intermediate workbook, replacing any earlier upload with
    /// the same id, and schedules its propagation.
    pub fn upload_workbook(
        &self,
        caller: &str,
        id: &str,
        document: &str,
        exports: &[ExportId],
        imports: &[BindingId],
    ) -> Result<WorkbookRole> {
        if id.is_empty() {
            return Err(PlatformError::Integrity("workbook id must not be empty".into()));
        }
        let mut wb = decode_workbook(document).map_err(|e| PlatformError::Integrity(e.to_string()))?;
        wb.id = id.into();
        let role = self.mutate(|st| {
            if let Some(existing) = st.workbooks.get(id) {
                if existing.owner != caller {
                    return Err(PlatformError::Forbidden(format!("workbook {id} belongs to {}", existing.owner)));
                }
            }
            let mut export_ranges = Vec::new();
            for e in exports {
                let rec = st.export(e).ok_or_else(|| not_found("export", e))?;
                if rec.descriptor.owner != caller {
                    return Err(PlatformError::Forbidden(format!("export {e} belongs to {}", rec.descriptor.owner)));
                }
                export_ranges.push(rec.descriptor.range.clone());
            }
            let mut import_ranges: Vec<RangeRef> = Vec::new();
            for b in imports {
                let binding = st.imports.get(b).filter(|x| x.importer == caller).ok_or_else(|| not_found("import", b))?;
                import_ranges.push(binding.target.clone());
            }
            let role = classify_workbook(&wb, &export_ranges, &import_ranges)
                .map_err(|e| PlatformError::Integrity(e.to_string()))?;
            if role != WorkbookRole::Intermediate {
                return Err(PlatformError::Precondition(format!(
                    "only intermediate workbooks are hosted; this one is {role:?}"
                )));
            }
            st.workbooks.insert(
                id.to_string(),
                HostedWorkbook {
                    id: id.to_string(),
                    owner: caller.to_string(),
                    document: encode_workbook(&wb),
                    exports: exports.to_vec(),
                    imports: imports.to_vec(),
                    last_propagated_versions: BTreeMap::new(),
                },
            );
            Ok(role)
        })?;
        self.generation.fetch_add(1, Ordering::SeqCst);
        self.schedule([id.to_string()]);
        Ok(role)
    }

    pub fn workbook_info(&self, caller: &str, id: &str) -> Result<WorkbookInfo> {
        let st = self.read()?;
        let w = st.workbooks.get(id).filter(|w| w.owner == caller).ok_or_else(|| not_found("workbook", id))?;
        Ok(WorkbookInfo {
            id: w.id.clone(),
            owner: w.owner.clone(),
            exports: w.exports.clone(),
            imports: w.imports.clone(),
            last_propagated_versions: w.last_propagated_versions.clone(),
            diagnostic: self.diagnostics.lock().get(id).cloned(),
        })
    }

    /// The hosted document, for its owner.
    pub fn workbook_document(&self, caller: &str, id: &str) -> Result<String> {
        let st = self.read()?;
        let w = st.workbooks.get(id).filter(|w| w.owner == caller).ok_or_else(|| not_found("workbook", id))?;
        Ok(w.document.clone())
    }

    pub fn delete_workbook(&self, caller: &str, id: &str) -> Result<()> {
        self.mutate(|st| {
            match st.workbooks.get(id) {
                Some(w) if w.owner == caller => {}
                _ => return Err(not_found("workbook", id)),
            }
            st.workbooks.remove(id);
            Ok(())
        })?;
        self.generation.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }

    // ---- propagation ---------------------------------------------------

    fn schedule_importers_of<'a>(&self, exports: impl IntoIterator<Item = &'a str>) {
        let ids: BTreeSet<String> = {
            let st = self.state.read();
            exports.into_iter().flat_map(|e| st.importers_of(e)).collect()
        };
        self.schedule(ids);
    }

    fn schedule(&self, ids: impl IntoIterator<Item = String>) {
        let mut queued = false;
        {
            let mut q = self.queue.lock();
            for id in ids {
                queued |= q.insert(id);
            }
        }
        if !queued {
            return;
        }
        match self.mode {
            PropagationMode::Inline => {
                self.drain();
            }
            PropagationMode::Deferred => {
                self.wake.notify_all();
            }
        }
    }

    /// Number of workbooks waiting for propagation.
    pub fn pending(&self) -> usize {
        self.queue.lock().len()
    }

    /// Queues every hosted workbook, as the periodic sweep does.
    pub fn sweep(&self) {
        let ids: Vec<String> = self.state.read().workbooks.keys().cloned().collect();
        self.queue.lock().extend(ids);
    }

    /// Runs one propagation of `id` without following downstream work.
    pub fn propagate(&self, id: &str) -> Result<Vec<(ExportId, u64)>> {
        let _g = self.drain_lock.lock();
        self.mutate(|st| propagate_in(st, id))
    }

    /// Propagates queued workbooks until the queue is empty, shallowest
    /// first. Workbooks on a cross-workbook cycle are skipped with a
    /// diagnostic naming the cycle's exports.
    pub fn drain(&self) -> DrainReport {
        let _g = self.drain_lock.lock();
        let mut report = DrainReport::default();
        let mut topo: Option<(u64, Topology)> = None;
        let mut steps = 0usize;
        loop {
            if self.alive().is_err() {
                break;
            }
            let generation = self.generation.load(Ordering::SeqCst);
            if topo.as_ref().map_or(true, |(g, _)| *g != generation) {
                topo = Some((generation, topology(&self.state.read())));
            }
            let (_, t) = topo.as_ref().expect("just computed");
            let next = {
                let mut q = self.queue.lock();
                let next = q
                    .iter()
                    .min_by_key(|id| (t.rank.get(*id).copied().unwrap_or(0), (*id).clone()))
                    .cloned();
                if let Some(id) = &next {
                    q.remove(id);
                }
                next
            };
            let Some(id) = next else { break };
            if let Some(cycle) = t.cycles.get(&id) {
                let message = format!(
                    "propagation aborted: dependency cycle across workbooks through exports {}",
                    cycle.join(", ")
                );
                tracing::warn!(workbook = %id, "{message}");
                self.diagnostics.lock().insert(id.clone(), message.clone());
                report.diagnostics.push((id, message));
                continue;
            }
            // a DAG settles long before this; the bound only guards bugs
            steps += 1;
            let limit = 4 + t.rank.len() * (t.rank.len() + 1) * 4;
            if steps > limit {
                let message = format!("propagation stopped after {limit} steps without settling");
                self.diagnostics.lock().insert(id.clone(), message.clone());
                report.diagnostics.push((id, message));
                self.queue.lock().clear();
                break;
            }
            match self.mutate(|st| propagate_in(st, &id)) {
                Ok(committed) => {
                    self.diagnostics.lock().remove(&id);
                    let downstream: BTreeSet<String> = {
                        let st = self.state.read();
                        committed.iter().flat_map(|(e, _)| st.importers_of(e)).collect()
                    };
                    self.queue.lock().extend(downstream);
                    report.committed.extend(committed);
                }
                Err(e) => {
                    tracing::warn!(workbook = %id, error = %e, "propagation failed");
                    self.diagnostics.lock().insert(id.clone(), e.to_string());
                    report.diagnostics.push((id, e.to_string()));
                }
            }
        }
        report
    }

    /// Starts a worker thread that drains whenever work is queued and
    /// sweeps all hosted workbooks every `sweep` interval.
    pub fn spawn_worker(self: &Arc<Self>, sweep: Duration) -> JoinHandle<()> {
        let weak: Weak<Self> = Arc::downgrade(self);
        std::thread::spawn(move || loop {
            let Some(p) = weak.upgrade() else { break };
            if p.stopping.load(Ordering::SeqCst) {
                break;
            }
            {
                let mut q = p.queue.lock();
                if q.is_empty() && p.wake.wait_for(&mut q, sweep).timed_out() {
                    drop(q);
                    p.sweep();
                }
            }
            if p.stopping.load(Ordering::SeqCst) {
                break;
            }
            p.drain();
        })
    }

    pub fn shutdown(&self) {
        self.stopping.store(true, Ordering::SeqCst);
        self.wake.notify_all();
    }
}
