//! Snapshot persistence: the whole state is written to a temporary file,
//! fsynced, and renamed over `state.json`.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use thiserror::Error;

use crate::state::PlatformState;

pub const SNAPSHOT: &str = "state.json";
const TEMP: &str = "state.json.tmp";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: damaged snapshot: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("injected failure at {0:?}")]
    Injected(FailPoint),
}

/// Places where a save can be made to fail, simulating a crash.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailPoint {
    /// Nothing reaches the disk.
    BeforeWrite,
    /// Half of the temporary file is written.
    TornTemp,
    /// The temporary file is complete but not yet renamed.
    BeforeRename,
    /// The snapshot is durable; the caller never hears about it.
    AfterRename,
}

impl std::str::FromStr for FailPoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "before-write" => Ok(FailPoint::BeforeWrite),
            "torn-temp" => Ok(FailPoint::TornTemp),
            "before-rename" => Ok(FailPoint::BeforeRename),
            "after-rename" => Ok(FailPoint::AfterRename),
            _ => Err(format!("unknown fail point `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Trigger {
    /// Return `StoreError::Injected` on the nth save from now.
    Error(FailPoint, u64),
    /// Abort the process on the nth save from now.
    Abort(FailPoint, u64),
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    trigger: Mutex<Option<Trigger>>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Store {
    /// Opens `dir`, creating it if needed. An absent snapshot yields an
    /// empty state; a leftover temporary file from an interrupted save is
    /// discarded.
    pub fn open(dir: impl Into<PathBuf>) -> Result<(Store, PlatformState), StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        let temp = dir.join(TEMP);
        if temp.exists() {
            fs::remove_file(&temp).map_err(io(&temp))?;
        }
        let path = dir.join(SNAPSHOT);
        let state = match fs::read(&path) {
            Ok(bytes) => {
                let state: PlatformState =
                    serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
                        path: path.clone(),
                        message: e.to_string(),
                    })?;
                state.validate().map_err(|message| StoreError::Corrupt {
                    path: path.clone(),
                    message,
                })?;
                state
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => PlatformState::default(),
            Err(e) => return Err(io(&path)(e)),
        };
        let store = Store {
            dir,
            trigger: Mutex::new(None),
        };
        Ok((store, state))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Makes the `nth` save from now (1-based) fail at `point`.
    pub fn fail_at(&self, point: FailPoint, nth: u64) {
        *self.trigger.lock() = Some(Trigger::Error(point, nth));
    }

    /// Like `fail_at`, but the process aborts instead of returning.
    pub fn abort_at(&self, point: FailPoint, nth: u64) {
        *self.trigger.lock() = Some(Trigger::Abort(point, nth));
    }

    fn fires(point: FailPoint, armed: Option<Trigger>) -> Result<(), StoreError> {
        match armed {
            Some(Trigger::Error(p, _)) if p == point => Err(StoreError::Injected(point)),
            Some(Trigger::Abort(p, _)) if p == point => std::process::abort(),
            _ => Ok(()),
        }
    }

    pub fn save(&self, state: &PlatformState) -> Result<(), StoreError> {
        let mut trigger = self.trigger.lock();
        let armed = match trigger.as_mut() {
            Some(Trigger::Error(_, n) | Trigger::Abort(_, n)) if *n > 1 => {
                *n -= 1;
                None
            }
            _ => trigger.take(),
        };
        self.write(state, armed)
    }

    fn write(&self, state: &PlatformState, armed: Option<Trigger>) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec(state).expect("state serializes");
        Self::fires(FailPoint::BeforeWrite, armed)?;
        let temp = self.dir.join(TEMP);
        let mut file = File::create(&temp).map_err(io(&temp))?;
        if let Err(e) = Self::fires(FailPoint::TornTemp, armed) {
            file.write_all(&bytes[..bytes.len() / 2]).map_err(io(&temp))?;
            return Err(e);
        }
        file.write_all(&bytes).map_err(io(&temp))?;
        file.sync_all().map_err(io(&temp))?;
        drop(file);
        Self::fires(FailPoint::BeforeRename, armed)?;
        let path = self.dir.join(SNAPSHOT);
        fs::rename(&temp, &path).map_err(io(&path))?;
        File::open(&self.dir)
            .and_then(|d| d.sync_all())
            .map_err(io(&self.dir))?;
        Self::fires(FailPoint::AfterRename, armed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_directory_is_fresh_state() {
        let dir = tempfile::tempdir().unwrap();
        let (_, state) = Store::open(dir.path().join("data")).unwrap();
        assert_eq!(state, PlatformState::default());
    }

    #[test]
    fn truncated_snapshot_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let (store, mut state) = Store::open(dir.path()).unwrap();
        state.counters.space = 3;
        store.save(&state).unwrap();
        let path = dir.path().join(SNAPSHOT);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = Store::open(dir.path()).unwrap_err().to_string();
        assert!(err.contains("state.json"), "{err}");
    }

    #[test]
    fn injected_failures_leave_previous_snapshot() {
        for point in [FailPoint::BeforeWrite, FailPoint::TornTemp, FailPoint::BeforeRename] {
            let dir = tempfile::tempdir().unwrap();
            let (store, mut state) = Store::open(dir.path()).unwrap();
            state.counters.export = 1;
            store.save(&state).unwrap();
            store.fail_at(point, 2);
            state.counters.export = 2;
            store.save(&state).unwrap();
            state.counters.export = 3;
            assert!(matches!(store.save(&state), Err(StoreError::Injected(p)) if p == point));
            let (_, loaded) = Store::open(dir.path()).unwrap();
            assert_eq!(loaded.counters.export, 2, "{point:?}");
        }
    }

    #[test]
    fn after_rename_failure_is_durable() {
        let dir = tempfile::tempdir().unwrap();
        let (store, mut state) = Store::open(dir.path()).unwrap();
        store.fail_at(FailPoint::AfterRename, 1);
        state.counters.import = 9;
        assert!(store.save(&state).is_err());
        let (_, loaded) = Store::open(dir.path()).unwrap();
        assert_eq!(loaded.counters.import, 9);
    }
}
