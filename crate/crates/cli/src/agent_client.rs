//! Talks to a running agent's loopback API.

use std::time::Duration;

use discom_agent::GridView;
use discom_core::composition::{ExportDescriptor, ImportBinding};
use reqwest::blocking::{Client, Response};
use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub struct AgentClient {
    base: String,
    http: Client,
}

impl AgentClient {
    pub fn new(base: &str) -> Self {
        let http = Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .expect("http client");
        Self {
            base: base.trim_end_matches('/').to_string(),
            http,
        }
    }

    fn read<T: DeserializeOwned>(&self, resp: reqwest::Result<Response>) -> CliResult<T> {
        let resp = resp.map_err(|e| CliError::Transport(format!("agent not reachable at {}: {e}", self.base)))?;
        let status = resp.status();
        let body: Value = resp.json().unwrap_or(Value::Null);
        if status.is_success() {
            return serde_json::from_value(body).map_err(|e| CliError::Transport(format!("unexpected agent reply: {e}")));
        }
        let msg = body["error"].as_str().unwrap_or("request failed").to_string();
        if status.is_server_error() {
            Err(CliError::Transport(msg))
        } else {
            Err(CliError::User(msg))
        }
    }

    pub fn grid(&self) -> CliResult<GridView> {
        self.read(self.http.get(format!("{}/local/grid", self.base)).send())
    }

    pub fn set_cell(&self, addr: &str, input: &str) -> CliResult<GridView> {
        let body = serde_json::json!({"addr": addr, "input": input});
        self.read(self.http.post(format!("{}/local/cells", self.base)).json(&body).send())
    }

    pub fn register_export(&self, body: &Value) -> CliResult<ExportDescriptor> {
        self.read(self.http.post(format!("{}/local/exports", self.base)).json(body).send())
    }

    pub fn bind_import(&self, export_id: &str, target: &str) -> CliResult<ImportBinding> {
        let body = serde_json::json!({"export_id": export_id, "target": target});
        self.read(self.http.post(format!("{}/local/imports", self.base)).json(&body).send())
    }
}
