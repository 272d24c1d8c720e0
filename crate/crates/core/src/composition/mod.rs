//! Users, spaces, exports and imports, plus the rules deciding who may read
//! an export and how a workbook takes part in a composition.

mod access;
mod classify;
mod descriptor;
mod space;

pub use access::{authorize, Access};
pub use classify::{classify_workbook, flows, IntegrityError, WorkbookRole};
pub use descriptor::{next_version, ExportDescriptor, ImportBinding, Visibility};
pub use space::{Credential, MemberRole, Space, SpaceError, User};

pub type UserId = String;
pub type SpaceId = String;
pub type ExportId = String;
pub type BindingId = String;
