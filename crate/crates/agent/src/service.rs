//! Runs an [`Agent`] on its own thread. The sync timer and external
//! commands share one loop, so they never interleave.

use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use discom_core::composition::{ExportDescriptor, ImportBinding, Visibility};
use discom_core::model::{CellAddress, CellValue, RangeRef};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use crate::agent::{Agent, AgentError, TickReport};
use crate::api::PlatformApi;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellView {
    pub addr: String,
    /// What the user typed: formula source or literal text.
    pub input: String,
    pub value: CellValue,
    pub read_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheetView {
    pub name: String,
    pub cells: Vec<CellView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportView {
    pub id: String,
    pub name: String,
    pub range: RangeRef,
    pub acked_version: u64,
    pub pending: bool,
    pub paused: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportView {
    pub id: String,
    pub export_id: String,
    pub target: RangeRef,
    pub applied_version: u64,
    pub stale: bool,
    pub error: Option<String>,
}

/// Everything a grid front end renders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridView {
    pub workbook: String,
    pub online: bool,
    pub sheets: Vec<SheetView>,
    pub exports: Vec<ExportView>,
    pub imports: Vec<ImportView>,
}

pub fn grid_view<A: PlatformApi>(agent: &Agent<A>) -> GridView {
    let wb = agent.workbook();
    let meta = agent.meta();
    let sheets = wb
        .sheets()
        .iter()
        .map(|s| SheetView {
            name: s.name.clone(),
            cells: s
                .cells
                .iter()
                .map(|(coord, cell)| {
                    let addr = CellAddress::at(s.name.clone(), *coord);
                    CellView {
                        addr: addr.to_string(),
                        input: cell
                            .formula_source()
                            .map_or_else(|| cell.computed.to_string(), str::to_string),
                        value: cell.computed.clone(),
                        read_only: agent.import_covering(&addr).is_some(),
                    }
                })
                .collect(),
        })
        .collect();
    GridView {
        workbook: wb.id.to_string(),
        online: agent.is_online(),
        sheets,
        exports: meta
            .exports
            .iter()
            .map(|(id, s)| ExportView {
                id: id.clone(),
                name: s.name.clone(),
                range: s.range.clone(),
                acked_version: s.acked_version,
                pending: meta.pending.contains(id),
                paused: s.paused.clone(),
            })
            .collect(),
        imports: meta
            .imports
            .iter()
            .map(|(id, s)| ImportView {
                id: id.clone(),
                export_id: s.export_id.clone(),
                target: s.target.clone(),
                applied_version: s.applied_version,
                stale: s.stale,
                error: s.error.clone(),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ExportRequest {
    pub space: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub range: RangeRef,
    #[serde(default = "space_wide")]
    pub visibility: Visibility,
}

fn space_wide() -> Visibility {
    Visibility::SpaceWide
}

type Reply<T> = oneshot::Sender<Result<T, AgentError>>;

pub enum Command {
    Grid(oneshot::Sender<GridView>),
    SetCell { addr: CellAddress, input: String, reply: Reply<GridView> },
    Export { request: ExportRequest, reply: Reply<ExportDescriptor> },
    Import { export_id: String, target: RangeRef, reply: Reply<ImportBinding> },
    Resume { export_id: String, reply: Reply<()> },
    Catalog(Reply<Vec<ExportDescriptor>>),
    Sync(Reply<TickReport>),
    Stop,
}

fn handle<A: PlatformApi>(agent: &mut Agent<A>, cmd: Command) -> bool {
    // a closed reply channel only means the caller gave up waiting
    match cmd {
        Command::Grid(reply) => {
            let _ = reply.send(grid_view(agent));
            false
        }
        Command::SetCell { addr, input, reply } => {
            let r = agent.set_cell(&addr, &input).map(|_| grid_view(agent));
            let ok = r.is_ok();
            let _ = reply.send(r);
            ok
        }
        Command::Export { request, reply } => {
            let r = agent.register_export(
                &request.space,
                &request.name,
                &request.description,
                request.range,
                request.visibility,
            );
            let ok = r.is_ok();
            let _ = reply.send(r);
            ok
        }
        Command::Import { export_id, target, reply } => {
            let r = agent.bind_import(&export_id, target);
            let ok = r.is_ok();
            let _ = reply.send(r);
            ok
        }
        Command::Resume { export_id, reply } => {
            let r = agent.resume_export(&export_id);
            let ok = r.is_ok();
            let _ = reply.send(r);
            ok
        }
        Command::Catalog(reply) => {
            let _ = reply.send(agent.catalog());
            false
        }
        Command::Sync(reply) => {
            let _ = reply.send(agent.tick());
            false
        }
        Command::Stop => false,
    }
}

fn run_tick<A: PlatformApi>(agent: &mut Agent<A>) {
    match agent.tick() {
        Ok(report) => {
            for e in &report.errors {
                tracing::warn!("{e}");
            }
            if !report.pushed.is_empty() || !report.applied.is_empty() {
                tracing::info!(pushed = ?report.pushed, applied = ?report.applied, "sync");
            }
        }
        Err(e) => tracing::error!("sync failed: {e}"),
    }
}

/// Sends commands to a running agent loop.
#[derive(Clone)]
pub struct AgentHandle {
    tx: mpsc::Sender<Command>,
}

impl AgentHandle {
    pub fn send(&self, cmd: Command) -> bool {
        self.tx.send(cmd).is_ok()
    }

    /// Issues a command and waits for its reply from async code.
    pub async fn ask<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Command) -> Option<T> {
        let (tx, rx) = oneshot::channel();
        if !self.send(make(tx)) {
            return None;
        }
        rx.await.ok()
    }

    /// Blocking variant of [`AgentHandle::ask`]; not for async contexts.
    pub fn ask_blocking<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Command) -> Option<T> {
        let (tx, rx) = oneshot::channel();
        if !self.send(make(tx)) {
            return None;
        }
        rx.blocking_recv().ok()
    }
}

pub struct AgentService {
    handle: AgentHandle,
    thread: JoinHandle<()>,
}

impl AgentService {
    /// Starts the loop. A tick runs immediately, then every `interval`,
    /// and again right after any successful local change.
    pub fn spawn<A>(mut agent: Agent<A>, interval: Duration) -> Self
    where
        A: PlatformApi + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        let thread = thread::spawn(move || {
            let mut next = Instant::now();
            loop {
                let wait = next.saturating_duration_since(Instant::now());
                match rx.recv_timeout(wait) {
                    Ok(Command::Stop) | Err(RecvTimeoutError::Disconnected) => break,
                    Ok(cmd) => {
                        if handle(&mut agent, cmd) {
                            next = Instant::now();
                        }
                    }
                    Err(RecvTimeoutError::Timeout) => {
                        run_tick(&mut agent);
                        next = Instant::now() + interval;
                    }
                }
            }
            if let Err(e) = agent.save() {
                tracing::error!("final save failed: {e}");
            }
        });
        Self {
            handle: AgentHandle { tx },
            thread,
        }
    }

    pub fn handle(&self) -> AgentHandle {
        self.handle.clone()
    }

    pub fn stop(self) {
        self.handle.send(Command::Stop);
        let _ = self.thread.join();
    }
}
