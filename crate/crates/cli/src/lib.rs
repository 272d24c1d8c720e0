//! The `discom` command line.

pub mod agent_client;
mod commands;
pub mod config;
pub mod error;
pub mod scenario;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use discom_core::composition::MemberRole;

pub use commands::{execute, Outcome};

#[derive(Debug, Parser)]
#[command(name = "discom", version, about = "Distributed spreadsheet composition")]
pub struct Cli {
    /// Platform URL.
    #[arg(long, global = true, env = "DISCOM_SERVER")]
    pub server: Option<String>,
    /// Session token, or the admin token for `admin` commands.
    #[arg(long, global = true, env = "DISCOM_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    /// Print machine-readable JSON.
    #[arg(long, global = true)]
    pub json: bool,
    /// Loopback URL of a running agent.
    #[arg(long, global = true, env = "DISCOM_AGENT")]
    pub agent: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the platform server.
    Serve(ServeArgs),
    /// Open a session and print its token.
    Login {
        user: String,
        #[arg(long, env = "DISCOM_SECRET", hide_env_values = true)]
        secret: String,
        /// Store server and token in the user config file.
        #[arg(long)]
        save: bool,
    },
    /// Manage platform users (admin token).
    Admin {
        #[command(subcommand)]
        command: AdminCommand,
    },
    /// Create spaces and manage members.
    Space {
        #[command(subcommand)]
        command: SpaceCommand,
    },
    /// Publish ranges from a workbook.
    Export {
        #[command(subcommand)]
        command: ExportCommand,
    },
    /// Bind exports into a workbook.
    Import {
        #[command(subcommand)]
        command: ImportCommand,
    },
    /// Run the client-side sync agent.
    Agent {
        #[command(subcommand)]
        command: AgentCommand,
    },
    /// Read or edit workbook cells.
    Cell {
        #[command(subcommand)]
        command: CellCommand,
    },
    /// Replay scripted multi-user traces.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub listen: Option<String>,
    /// Seconds between propagation sweeps.
    #[arg(long)]
    pub sweep_secs: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, hide_env_values = true)]
    pub admin_token: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum AdminCommand {
    User {
        #[command(subcommand)]
        command: UserCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum UserCommand {
    Add {
        id: String,
        #[arg(long)]
        secret: String,
        #[arg(long, default_value = "")]
        name: String,
    },
    List,
    Remove {
        id: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum SpaceCommand {
    Create {
        name: String,
    },
    AddMember {
        user: String,
        #[arg(long)]
        role: MemberRole,
        /// Defaults to the caller's only space.
        #[arg(long)]
        space: Option<String>,
    },
    RemoveMember {
        user: String,
        #[arg(long)]
        space: Option<String>,
    },
    List,
}

// Where agent-side commands act: a workbook file directly, or a running
// agent over loopback.
#[derive(Debug, Args)]
pub struct Target {
    /// Act on this workbook file instead of a running agent.
    #[arg(long)]
    pub workbook: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ExportCommand {
    Register {
        #[arg(long)]
        range: String,
        #[arg(long)]
        space: Option<String>,
        /// Defaults to the range.
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value = "")]
        description: String,
        /// Restrict to these users; space-wide when absent.
        #[arg(long = "to", value_delimiter = ',')]
        to: Vec<String>,
        #[command(flatten)]
        target: Target,
    },
    List,
    Revoke {
        id: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum ImportCommand {
    Bind {
        export_id: String,
        #[arg(long = "target")]
        range: String,
        #[command(flatten)]
        target: Target,
    },
    List,
}

#[derive(Debug, Subcommand)]
pub enum AgentCommand {
    /// Start the sync loop and the loopback API.
    Run {
        #[arg(long)]
        workbook: Option<PathBuf>,
        /// Seconds between sync ticks.
        #[arg(long)]
        interval: Option<u64>,
        /// Loopback listen address.
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum CellCommand {
    Set {
        addr: String,
        value: String,
        #[command(flatten)]
        target: Target,
    },
    Get {
        addr: String,
        #[command(flatten)]
        target: Target,
    },
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCommand {
    Replay {
        file: PathBuf,
        /// Write the final snapshot as JSON.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
}
