use super::{ExportDescriptor, Space, Visibility};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Permit,
    Deny,
}

impl Access {
    pub fn is_permit(self) -> bool {
        self == Access::Permit
    }
}

/// Read access to an export's images. `space` must be the export's space.
/// Restricted readers must also still be members, so dropping someone from
/// the space revokes access even if a stale restricted list names them.
pub fn authorize(user: &str, export: &ExportDescriptor, space: &Space) -> Access {
    debug_assert_eq!(export.space, space.id);
    let permitted = export.owner == user
        || match &export.visibility {
            Visibility::SpaceWide => space.is_member(user),
            Visibility::Restricted(readers) => readers.contains(user) && space.is_member(user),
        };
    if permitted {
        Access::Permit
    } else {
        Access::Deny
    }
}
