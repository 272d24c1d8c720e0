//! What the agent needs from the platform, and an in-process implementation.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use discom_core::composition::{BindingId, ExportDescriptor, ExportId, ImportBinding, WorkbookRole};
use discom_core::model::RangeImage;
use discom_server::api::{NewExport, NewImport};
use discom_server::{Platform, PlatformError, Updates};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApiError {
    /// The platform could not be reached; the request had no effect.
    #[error("platform unreachable: {0}")]
    Unreachable(String),
    #[error(transparent)]
    Rejected(#[from] PlatformError),
}

impl ApiError {
    /// Transport failures and server-side faults are worth retrying later.
    pub fn is_transient(&self) -> bool {
        matches!(self, ApiError::Unreachable(_) | ApiError::Rejected(PlatformError::Storage(_)))
    }
}

pub type ApiResult<T> = Result<T, ApiError>;

pub trait PlatformApi {
    fn poll(&self, known: &[(BindingId, u64)]) -> ApiResult<Updates>;
    fn push(&self, export_id: &str, image: &RangeImage, base_version: u64) -> ApiResult<u64>;
    fn latest(&self, export_id: &str) -> ApiResult<Option<RangeImage>>;
    fn upload(
        &self,
        workbook_id: &str,
        document: &str,
        exports: &[ExportId],
        imports: &[BindingId],
    ) -> ApiResult<WorkbookRole>;
    fn register_export(&self, new: &NewExport) -> ApiResult<ExportDescriptor>;
    fn register_import(&self, new: &NewImport) -> ApiResult<ImportBinding>;
    fn catalog(&self) -> ApiResult<Vec<ExportDescriptor>>;
}

/// Calls a [`Platform`] in the same process, as a given session. The
/// `online` switch simulates losing the network.
#[derive(Clone)]
pub struct LocalApi {
    platform: Arc<Platform>,
    token: String,
    online: Arc<AtomicBool>,
}

impl LocalApi {
    pub fn new(platform: Arc<Platform>, token: impl Into<String>) -> Self {
        Self {
            platform,
            token: token.into(),
            online: Arc::new(AtomicBool::new(true)),
        }
    }

    /// Shared switch; clones of this `LocalApi` see the same state.
    pub fn connectivity(&self) -> Arc<AtomicBool> {
        self.online.clone()
    }

    pub fn set_online(&self, online: bool) {
        self.online.store(online, Ordering::SeqCst);
    }

    fn session(&self) -> ApiResult<String> {
        if !self.online.load(Ordering::SeqCst) {
            return Err(ApiError::Unreachable("offline".into()));
        }
        Ok(self.platform.authenticate(&self.token)?)
    }
}

impl PlatformApi for LocalApi {
    fn poll(&self, known: &[(BindingId, u64)]) -> ApiResult<Updates> {
        let user = self.session()?;
        Ok(self.platform.poll_updates(&user, known)?)
    }

    fn push(&self, export_id: &str, image: &RangeImage, base_version: u64) -> ApiResult<u64> {
        let user = self.session()?;
        Ok(self.platform.push_contribution(&user, export_id, image, base_version)?)
    }

    fn latest(&self, export_id: &str) -> ApiResult<Option<RangeImage>> {
        let user = self.session()?;
        Ok(self.platform.latest_contribution(&user, export_id)?.map(|c| c.image))
    }

    fn upload(
        &self,
        workbook_id: &str,
        document: &str,
        exports: &[ExportId],
        imports: &[BindingId],
    ) -> ApiResult<WorkbookRole> {
        let user = self.session()?;
        Ok(self.platform.upload_workbook(&user, workbook_id, document, exports, imports)?)
    }

    fn register_export(&self, new: &NewExport) -> ApiResult<ExportDescriptor> {
        let user = self.session()?;
        Ok(self.platform.register_export(&user, new.clone())?)
    }

    fn register_import(&self, new: &NewImport) -> ApiResult<ImportBinding> {
        let user = self.session()?;
        Ok(self.platform.register_import(&user, new.clone())?)
    }

    fn catalog(&self) -> ApiResult<Vec<ExportDescriptor>> {
        let user = self.session()?;
        Ok(self.platform.list_exports(&user)?)
    }
}
