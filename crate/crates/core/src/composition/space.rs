use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{SpaceId, UserId};

/// Salted SHA-256 of a login secret, hex encoded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    pub salt: String,
    pub digest: String,
}

impl Credential {
    pub fn derive(secret: &str, salt: &str) -> Self {
        Self {
            salt: salt.to_string(),
            digest: digest(secret, salt),
        }
    }

    /// Constant-time comparison against a candidate secret.
    pub fn verify(&self, secret: &str) -> bool {
        let candidate = digest(secret, &self.salt);
        candidate.len() == self.digest.len()
            && candidate
                .bytes()
                .zip(self.digest.bytes())
                .fold(0u8, |acc, (a, b)| acc | (a ^ b))
                == 0
    }
}

fn digest(secret: &str, salt: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update([0u8]);
    h.update(secret.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub id: UserId,
    pub name: String,
    pub credential: Credential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemberRole {
    Creator,
    Exporter,
    Importer,
    Both,
}

impl std::str::FromStr for MemberRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "creator" => Ok(MemberRole::Creator),
            "exporter" => Ok(MemberRole::Exporter),
            "importer" => Ok(MemberRole::Importer),
            "both" => Ok(MemberRole::Both),
            _ => Err(format!("unknown role `{s}` (expected exporter, importer or both)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpaceError {
    #[error("only the space creator may change membership")]
    NotCreator,
    #[error("the creator role cannot be granted or changed")]
    CreatorRole,
    #[error("the creator cannot be removed from the space")]
    RemoveCreator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Space {
    pub id: SpaceId,
    pub name: String,
    pub creator: UserId,
    pub members: BTreeMap<UserId, MemberRole>,
}

impl Space {
    /// A space whose only member is its creator.
    pub fn new(id: impl Into<SpaceId>, name: impl Into<String>, creator: impl Into<UserId>) -> Self {
        let creator = creator.into();
        Self {
            id: id.into(),
            name: name.into(),
            members: BTreeMap::from([(creator.clone(), MemberRole::Creator)]),
            creator,
        }
    }

    pub fn is_member(&self, user: &str) -> bool {
        self.members.contains_key(user)
    }

    pub fn role_of(&self, user: &str) -> Option<MemberRole> {
        self.members.get(user).copied()
    }

    /// Adds or re-roles a member. Returns `false` when nothing changed.
    pub fn add_member(&mut self, caller: &str, user: &str, role: MemberRole) -> Result<bool, SpaceError> {
        if caller != self.creator {
            return Err(SpaceError::NotCreator);
        }
        if role == MemberRole::Creator || user == self.creator {
            return match self.members.get(user) {
                Some(MemberRole::Creator) if role == MemberRole::Creator => Ok(false),
                _ => Err(SpaceError::CreatorRole),
            };
        }
        Ok(self.members.insert(user.to_string(), role) != Some(role))
    }

    /// Returns `false` when the user was not a member.
    pub fn remove_member(&mut self, caller: &str, user: &str) -> Result<bool, SpaceError> {
        if caller != self.creator {
            return Err(SpaceError::NotCreator);
        }
        if user == self.creator {
            return Err(SpaceError::RemoveCreator);
        }
        Ok(self.members.remove(user).is_some())
    }
}
