//! The client side of discom: keeps a local workbook in step with the
//! platform and serves a loopback API for grid front ends.

mod agent;
pub mod api;
pub mod client;
pub mod loopback;
pub mod service;

pub use agent::{Agent, AgentError, AgentMeta, ExportState, ImportState, TickReport, META_PROPERTY};
pub use api::{ApiError, ApiResult, LocalApi, PlatformApi};
pub use client::HttpClient;
pub use service::{AgentHandle, AgentService, GridView};
