//! The discom platform service.
//!
//! [`Platform`] holds all state and implements every operation; [`http`]
//! exposes it over HTTP with JSON bodies.

pub mod api;
pub mod config;
mod error;
pub mod http;
mod platform;
mod propagate;
pub mod state;
pub mod store;

pub use error::{PlatformError, Result};
pub use platform::{
    DrainReport, LatestContribution, Platform, PlatformOptions, PropagationMode, UpdateDelta, Updates,
};
