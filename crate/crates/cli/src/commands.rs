use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use discom_agent::service::AgentService;
use discom_agent::{loopback, Agent, HttpClient};
use discom_core::composition::Visibility;
use discom_core::model::{CellAddress, RangeRef};
use discom_server::api::NewUser;
use discom_server::config::{ConfigLayer, ServerConfig};
use discom_server::store::FailPoint;
use discom_server::Platform;
use serde::Serialize;
use serde_json::{json, Value};

use crate::agent_client::AgentClient;
use crate::config::{self, UserConfig, DEFAULT_AGENT, DEFAULT_INTERVAL_SECS, DEFAULT_SERVER};
use crate::error::{CliError, CliResult};
use crate::*;

/// Result of one command: exit code, text for humans, JSON for scripts.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub text: String,
    pub json: Value,
}

impl Outcome {
    fn ok(text: impl Into<String>, json: Value) -> Self {
        Self {
            code: 0,
            text: text.into(),
            json,
        }
    }

    fn data<T: Serialize>(text: impl Into<String>, value: &T) -> Self {
        Self::ok(text, serde_json::to_value(value).expect("serializable"))
    }
}

struct Context {
    server: String,
    token: Option<String>,
    agent: String,
    user_config: UserConfig,
}

impl Context {
    fn new(cli: &Cli) -> CliResult<Self> {
        let user_config = match config::default_path() {
            Some(p) => UserConfig::load(&p)?,
            None => UserConfig::default(),
        };
        Ok(Self {
            server: cli
                .server
                .clone()
                .or_else(|| user_config.server.clone())
                .unwrap_or_else(|| DEFAULT_SERVER.into()),
            token: cli.token.clone().or_else(|| user_config.token.clone()),
            agent: cli.agent.clone().unwrap_or_else(|| DEFAULT_AGENT.into()),
            user_config,
        })
    }

    fn client(&self) -> HttpClient {
        HttpClient::new(&self.server, self.token.clone())
    }

    /// Resolves `--space`, falling back to the caller's only space.
    fn space(&self, given: Option<String>) -> CliResult<String> {
        if let Some(s) = given {
            return Ok(s);
        }
        let spaces = self.client().list_spaces()?;
        match spaces.as_slice() {
            [only] => Ok(only.id.clone()),
            [] => Err(CliError::User("you are not a member of any space".into())),
            _ => Err(CliError::User("you belong to several spaces; pass --space".into())),
        }
    }

    fn open_workbook(&self, path: &Path) -> CliResult<Agent<HttpClient>> {
        Ok(Agent::open(self.client(), path)?)
    }
}

fn parse_range(s: &str) -> CliResult<RangeRef> {
    RangeRef::parse(s).map_err(|e| CliError::User(e.to_string()))
}

fn parse_addr(s: &str) -> CliResult<CellAddress> {
    CellAddress::parse(s).map_err(|e| CliError::User(e.to_string()))
}

fn runtime() -> CliResult<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Transport(format!("runtime: {e}")))
}

async fn ctrl_c() {
    let _ = tokio::signal::ctrl_c().await;
}

/// `DISCOM_CRASH_AT=point:nth` aborts the process at a storage fail point;
/// used by crash tests.
fn crash_trigger() -> CliResult<Option<(FailPoint, u64)>> {
    let Ok(spec) = std::env::var("DISCOM_CRASH_AT") else {
        return Ok(None);
    };
    let (point, nth) = spec.split_once(':').unwrap_or((&spec, "1"));
    let point: FailPoint = point.parse().map_err(CliError::User)?;
    let nth = nth
        .parse()
        .map_err(|_| CliError::User(format!("bad DISCOM_CRASH_AT count `{nth}`")))?;
    Ok(Some((point, nth)))
}

fn serve(args: ServeArgs) -> CliResult<Outcome> {
    let flags = ConfigLayer {
        data_dir: args.data_dir,
        listen: args.listen,
        sweep_interval_secs: args.sweep_secs,
        workers: args.workers,
        admin_token: args.admin_token,
    };
    let config = ServerConfig::resolve(args.config.as_deref(), |k| std::env::var(k).ok(), flags)
        .map_err(|e| CliError::User(e.to_string()))?;
    let crash = crash_trigger()?;
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let on_ready = |addr: std::net::SocketAddr, platform: &Arc<Platform>| {
        if let (Some((point, nth)), Some(store)) = (crash, platform.store()) {
            store.abort_at(point, nth);
        }
        println!("listening on {addr}");
        use std::io::Write;
        let _ = std::io::stdout().flush();
    };
    discom_server::http::run(&config, on_ready, ctrl_c()).map_err(|e| CliError::Transport(e.to_string()))?;
    Ok(Outcome::ok("server stopped", json!({"stopped": true})))
}

fn admin(ctx: &Context, cmd: UserCommand) -> CliResult<Outcome> {
    let c = ctx.client();
    Ok(match cmd {
        UserCommand::Add { id, secret, name } => {
            let u = c.add_user(&NewUser { id, name, secret })?;
            Outcome::data(format!("added user {}", u.id), &u)
        }
        UserCommand::List => {
            let users = c.list_users()?;
            let text = users
                .iter()
                .map(|u| format!("{}\t{}", u.id, u.name))
                .collect::<Vec<_>>()
                .join("\n");
            Outcome::data(text, &users)
        }
        UserCommand::Remove { id } => {
            c.remove_user(&id)?;
            Outcome::ok(format!("removed user {id}"), json!({"removed": id}))
        }
    })
}

fn space(ctx: &Context, cmd: SpaceCommand) -> CliResult<Outcome> {
    let c = ctx.client();
    Ok(match cmd {
        SpaceCommand::Create { name } => {
            let s = c.create_space(&name)?;
            Outcome::data(format!("created space {} ({})", s.id, s.name), &s)
        }
        SpaceCommand::AddMember { user, role, space } => {
            let id = ctx.space(space)?;
            let s = c.add_member(&id, &user, role)?;
            Outcome::data(format!("space {} has {} members", s.id, s.members.len()), &s)
        }
        SpaceCommand::RemoveMember { user, space } => {
            let id = ctx.space(space)?;
            let s = c.remove_member(&id, &user)?;
            Outcome::data(format!("space {} has {} members", s.id, s.members.len()), &s)
        }
        SpaceCommand::List => {
            let spaces = c.list_spaces()?;
            let text = spaces
                .iter()
                .map(|s| format!("{}\t{}\t{} members", s.id, s.name, s.members.len()))
                .collect::<Vec<_>>()
                .join("\n");
            Outcome::data(text, &spaces)
        }
    })
}

fn export(ctx: &Context, cmd: ExportCommand) -> CliResult<Outcome> {
    match cmd {
        ExportCommand::Register {
            range,
            space,
            name,
            description,
            to,
            target,
        } => {
            let space = ctx.space(space)?;
            let parsed = parse_range(&range)?;
            let visibility = if to.is_empty() {
                Visibility::SpaceWide
            } else {
                Visibility::Restricted(to.into_iter().collect())
            };
            let name = name.unwrap_or_else(|| parsed.to_string());
            let d = match target.workbook {
                Some(path) => {
                    let mut agent = ctx.open_workbook(&path)?;
                    agent.register_export(&space, &name, &description, parsed, visibility)?
                }
                None => AgentClient::new(&ctx.agent).register_export(&json!({
                    "space": space,
                    "name": name,
                    "description": description,
                    "range": parsed,
                    "visibility": visibility,
                }))?,
            };
            Ok(Outcome::data(d.id.clone(), &d))
        }
        ExportCommand::List => {
            let list = ctx.client().list_exports()?;
            let text = list
                .iter()
                .map(|d| {
                    let revoked = if d.revoked { " revoked" } else { "" };
                    format!("{}\t{}\t{}\t{}\tv{}{revoked}", d.id, d.owner, d.name, d.range, d.latest_version)
                })
                .collect::<Vec<_>>()
                .join("\n");
            Ok(Outcome::data(text, &list))
        }
        ExportCommand::Revoke { id } => {
            let d = ctx.client().revoke_export(&id)?;
            Ok(Outcome::data(format!("revoked {}", d.id), &d))
        }
    }
}

fn import(ctx: &Context, cmd: ImportCommand) -> CliResult<Outcome> {
    match cmd {
        ImportCommand::Bind {
            export_id,
            range,
            target,
        } => {
            let parsed = parse_range(&range)?;
            let b = match target.workbook {
                Some(path) => ctx.open_workbook(&path)?.bind_import(&export_id, parsed)?,
                None => AgentClient::new(&ctx.agent).bind_import(&export_id, &parsed.to_string())?,
            };
            Ok(Outcome::data(b.id.clone(), &b))
        }
        ImportCommand::List => {
            let list = ctx.client().list_imports()?;
            let text = list
                .iter()
                .map(|b| format!("{}\t{}\t{}\tv{}", b.id, b.export_id, b.target, b.applied_version))
                .collect::<Vec<_>>()
                .join("\n");
            Ok(Outcome::data(text, &list))
        }
    }
}

fn agent_run(ctx: &Context, workbook: Option<std::path::PathBuf>, interval: Option<u64>, listen: Option<String>) -> CliResult<Outcome> {
    let cfg = &ctx.user_config;
    let path = workbook
        .or_else(|| cfg.workbook.clone())
        .ok_or_else(|| CliError::User("no workbook: pass --workbook or set it in the config file".into()))?;
    let interval = Duration::from_secs(interval.or(cfg.interval_secs).unwrap_or(DEFAULT_INTERVAL_SECS).max(1));
    let listen = listen
        .or_else(|| cfg.listen.clone())
        .unwrap_or_else(|| DEFAULT_AGENT.trim_start_matches("http://").into());
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let agent = ctx.open_workbook(&path)?;
    let service = AgentService::spawn(agent, interval);
    let app = loopback::router(service.handle());
    let rt = runtime()?;
    let served = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&listen)
            .await
            .map_err(|e| CliError::Transport(format!("{listen}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| CliError::Transport(e.to_string()))?;
        if !addr.ip().is_loopback() {
            return Err(CliError::User(format!("{addr} is not a loopback address")));
        }
        println!("agent for {} listening on http://{addr}", path.display());
        axum_serve(listener, app).await
    });
    service.stop();
    served?;
    Ok(Outcome::ok("agent stopped", json!({"stopped": true})))
}

async fn axum_serve(listener: tokio::net::TcpListener, app: axum::Router) -> CliResult<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(ctrl_c())
        .await
        .map_err(|e| CliError::Transport(e.to_string()))
}

fn cell(ctx: &Context, cmd: CellCommand) -> CliResult<Outcome> {
    match cmd {
        CellCommand::Set { addr, value, target } => {
            let parsed = parse_addr(&addr)?;
            match target.workbook {
                Some(path) => {
                    let mut agent = ctx.open_workbook(&path)?;
                    agent.set_cell(&parsed, &value)?;
                    let v = agent.workbook().value(&parsed);
                    Ok(Outcome::data(v.to_string(), &v))
                }
                None => {
                    AgentClient::new(&ctx.agent).set_cell(&parsed.to_string(), &value)?;
                    Ok(Outcome::ok(format!("{parsed} set"), json!({"addr": parsed.to_string()})))
                }
            }
        }
        CellCommand::Get { addr, target } => {
            let parsed = parse_addr(&addr)?;
            let value = match target.workbook {
                Some(path) => ctx.open_workbook(&path)?.workbook().value(&parsed),
                None => {
                    let grid = AgentClient::new(&ctx.agent).grid()?;
                    let key = parsed.to_string();
                    grid.sheets
                        .iter()
                        .flat_map(|s| &s.cells)
                        .find(|c| c.addr.eq_ignore_ascii_case(&key))
                        .map(|c| c.value.clone())
                        .unwrap_or_default()
                }
            };
            Ok(Outcome::data(value.to_string(), &value))
        }
    }
}

fn scenario(cmd: ScenarioCommand) -> CliResult<Outcome> {
    let ScenarioCommand::Replay { file, snapshot } = cmd;
    let text = std::fs::read_to_string(&file).map_err(|e| CliError::User(format!("{}: {e}", file.display())))?;
    let mut r = crate::scenario::replay(&text).map_err(|e| CliError::User(format!("{}: {e}", file.display())))?;
    let snap = r.snapshot();
    if let Some(out) = snapshot {
        std::fs::write(&out, serde_json::to_string_pretty(&snap).expect("json"))
            .map_err(|e| CliError::User(format!("{}: {e}", out.display())))?;
    }
    let json = json!({"log": r.log, "failures": r.failures});
    let mut out = Outcome::ok(r.log.join("\n"), json);
    if !r.failures.is_empty() {
        out.code = 1;
        out.text.push_str(&format!("\n{} expectation(s) failed", r.failures.len()));
    }
    Ok(out)
}

fn dispatch(cli: Cli) -> CliResult<Outcome> {
    let ctx = Context::new(&cli)?;
    match cli.command {
        Command::Serve(args) => serve(args),
        Command::Login { user, secret, save } => {
            let token = ctx.client().login(&user, &secret)?;
            if save {
                let path = config::default_path()
                    .ok_or_else(|| CliError::User("no config location; set DISCOM_CONFIG".into()))?;
                let mut cfg = ctx.user_config.clone();
                cfg.server = Some(ctx.server.clone());
                cfg.token = Some(token.clone());
                cfg.save(&path)?;
            }
            Ok(Outcome::ok(token.clone(), json!({"token": token})))
        }
        Command::Admin {
            command: AdminCommand::User { command },
        } => admin(&ctx, command),
        Command::Space { command } => space(&ctx, command),
        Command::Export { command } => export(&ctx, command),
        Command::Import { command } => import(&ctx, command),
        Command::Agent {
            command: AgentCommand::Run {
                workbook,
                interval,
                listen,
            },
        } => agent_run(&ctx, workbook, interval, listen),
        Command::Cell { command } => cell(&ctx, command),
        Command::Scenario { command } => scenario(command),
    }
}

/// Runs a parsed command line.
pub fn execute(cli: Cli) -> Outcome {
    dispatch(cli).unwrap_or_else(|e| Outcome {
        code: e.exit_code(),
        text: format!("error: {e}"),
        json: json!({"error": e.to_string(), "exit_code": e.exit_code()}),
    })
}
