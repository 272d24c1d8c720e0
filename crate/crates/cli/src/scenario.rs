//! Deterministic replay of multi-party traces against an in-process
//! platform.
//!
//! A trace is line oriented; `#` starts a comment. Directives:
//!
//! ```text
//! platform inline|deferred          propagation mode (default inline)
//! user ID [NAME]                    account; the secret is the id
//! space ALIAS OWNER NAME            space created by OWNER
//! member ALIAS USER ROLE            added by the space creator
//! agent NAME USER                   agent with an empty workbook named NAME
//! set AGENT ADDR INPUT              local edit
//! export AGENT ALIAS SPACE RANGE [to=U1,U2]
//! import AGENT ALIAS EXPORT RANGE   bind export ALIAS into RANGE
//! tick [AGENT...]                   sync cycle; all running agents if none named
//! offline AGENT | online AGENT      platform connectivity of one agent
//! stop AGENT | start AGENT          stopped agents skip ticks
//! drain                             run queued server propagation
//! revoke EXPORT                     owner revokes the export
//! expect AGENT ADDR VALUE           computed value check
//! expect-version EXPORT N           latest committed version check
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use discom_agent::{Agent, LocalApi, TickReport};
use discom_core::composition::{MemberRole, Visibility};
use discom_core::model::{encode_workbook, CellAddress, CellValue, RangeRef, Workbook};
use discom_server::api::NewUser;
use discom_server::{Platform, PlatformOptions, PropagationMode};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
#[error("line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

struct Participant {
    user: String,
    agent: Agent<LocalApi>,
    link: LocalApi,
    running: bool,
}

pub struct Replay {
    platform: Option<Arc<Platform>>,
    mode: PropagationMode,
    agents: BTreeMap<String, Participant>,
    spaces: BTreeMap<String, String>,
    exports: BTreeMap<String, (String, String)>,
    bindings: BTreeMap<String, String>,
    /// One line per directive outcome.
    pub log: Vec<String>,
    /// Failed `expect` checks, as log lines.
    pub failures: Vec<String>,
}

fn summarize(name: &str, r: &TickReport) -> String {
    let mut s = format!("tick {name}:");
    let list = |v: &[(String, u64)]| v.iter().map(|(id, n)| format!("{id}@{n}")).collect::<Vec<_>>().join(",");
    if !r.applied.is_empty() {
        let _ = write!(s, " applied {}", list(&r.applied));
    }
    if !r.pushed.is_empty() {
        let _ = write!(s, " pushed {}", list(&r.pushed));
    }
    if !r.adopted.is_empty() {
        let _ = write!(s, " adopted {}", list(&r.adopted));
    }
    if let Some(role) = r.uploaded {
        let _ = write!(s, " uploaded as {role:?}");
    }
    if !r.revoked.is_empty() {
        let _ = write!(s, " revoked {}", r.revoked.join(","));
    }
    for (id, why) in &r.paused {
        let _ = write!(s, " paused {id} ({why})");
    }
    if !r.online {
        s.push_str(" offline");
    }
    if s.ends_with(':') {
        s.push_str(" idle");
    }
    s
}

impl Replay {
    pub fn new() -> Self {
        Self {
            platform: None,
            mode: PropagationMode::Inline,
            agents: BTreeMap::new(),
            spaces: BTreeMap::new(),
            exports: BTreeMap::new(),
            bindings: BTreeMap::new(),
            log: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn platform(&mut self) -> &Arc<Platform> {
        let mode = self.mode;
        self.platform.get_or_insert_with(|| {
            Arc::new(Platform::in_memory(PlatformOptions {
                seed: Some(0),
                propagation: mode,
            }))
        })
    }

    /// Platform id behind an export alias.
    pub fn export_id(&self, alias: &str) -> Option<&str> {
        self.exports.get(alias).map(|(id, _)| id.as_str())
    }

    pub fn workbook(&self, agent: &str) -> Option<&Workbook> {
        self.agents.get(agent).map(|p| p.agent.workbook())
    }

    pub fn value(&self, agent: &str, addr: &str) -> Option<CellValue> {
        let addr = CellAddress::parse(addr).ok()?;
        self.workbook(agent).map(|wb| wb.value(&addr))
    }

    /// Full platform state plus every agent's workbook document.
    pub fn snapshot(&mut self) -> Value {
        let state = serde_json::to_value(self.platform().snapshot()).expect("state serializes");
        let agents: BTreeMap<&String, String> = self
            .agents
            .iter_mut()
            .map(|(name, p)| {
                let _ = p.agent.save();
                (name, encode_workbook(p.agent.workbook()))
            })
            .collect();
        json!({"platform": state, "agents": agents})
    }

    fn participant(&mut self, name: &str) -> Result<&mut Participant, String> {
        self.agents.get_mut(name).ok_or_else(|| format!("unknown agent `{name}`"))
    }

    fn space(&self, alias: &str) -> Result<String, String> {
        self.spaces
            .get(alias)
            .cloned()
            .ok_or_else(|| format!("unknown space `{alias}`"))
    }

    fn export(&self, alias: &str) -> Result<(String, String), String> {
        self.exports
            .get(alias)
            .cloned()
            .ok_or_else(|| format!("unknown export `{alias}`"))
    }

    fn tick(&mut self, name: &str) -> Result<(), String> {
        let p = self.participant(name)?;
        if !p.running {
            self.log.push(format!("tick {name}: stopped"));
            return Ok(());
        }
        let report = p.agent.tick().map_err(|e| e.to_string())?;
        let line = summarize(name, &report);
        for e in &report.errors {
            self.log.push(format!("  {name}: {e}"));
        }
        self.log.push(line);
        Ok(())
    }

    fn check(&mut self, ok: bool, line: String) {
        if !ok {
            self.failures.push(line.clone());
        }
        self.log.push(line);
    }

    fn step(&mut self, words: &[String]) -> Result<(), String> {
        let arity = |n: usize| {
            if words.len() < n {
                Err(format!("`{}` needs {} arguments", words[0], n - 1))
            } else {
                Ok(())
            }
        };
        match words[0].as_str() {
            "platform" => {
                arity(2)?;
                if self.platform.is_some() {
                    return Err("`platform` must come before anything that uses it".into());
                }
                self.mode = match words[1].as_str() {
                    "inline" => PropagationMode::Inline,
                    "deferred" => PropagationMode::Deferred,
                    other => return Err(format!("unknown propagation mode `{other}`")),
                };
            }
            "user" => {
                arity(2)?;
                let name = words.get(2).cloned().unwrap_or_default();
                self.platform()
                    .add_user(NewUser {
                        id: words[1].clone(),
                        name,
                        secret: words[1].clone(),
                    })
                    .map_err(|e| e.to_string())?;
            }
            "space" => {
                arity(4)?;
                let space = self
                    .platform()
                    .create_space(&words[2], &words[3])
                    .map_err(|e| e.to_string())?;
                self.log.push(format!("space {} = {}", words[1], space.id));
                self.spaces.insert(words[1].clone(), space.id);
            }
            "member" => {
                arity(4)?;
                let space = self.space(&words[1])?;
                let role: MemberRole = words[3].parse()?;
                let creator = self.platform().snapshot().spaces[&space].creator.clone();
                self.platform()
                    .add_member(&creator, &space, &words[2], role)
                    .map_err(|e| e.to_string())?;
            }
            "agent" => {
                arity(3)?;
                let p = self.platform().clone();
                let token = p.login(&words[2], &words[2]).map_err(|e| e.to_string())?;
                let link = LocalApi::new(p, token);
                let agent = Agent::new(link.clone(), Workbook::new(words[1].as_str())).map_err(|e| e.to_string())?;
                self.agents.insert(
                    words[1].clone(),
                    Participant {
                        user: words[2].clone(),
                        agent,
                        link,
                        running: true,
                    },
                );
            }
            "set" => {
                arity(4)?;
                let addr = CellAddress::parse(&words[2]).map_err(|e| e.to_string())?;
                let input = words[3..].join(" ");
                self.participant(&words[1])?
                    .agent
                    .set_cell(&addr, &input)
                    .map_err(|e| e.to_string())?;
            }
            "export" => {
                arity(5)?;
                let space = self.space(&words[3])?;
                let range = RangeRef::parse(&words[4]).map_err(|e| e.to_string())?;
                let visibility = match words.get(5).and_then(|w| w.strip_prefix("to=")) {
                    Some(users) => Visibility::Restricted(users.split(',').map(str::to_string).collect()),
                    None => Visibility::SpaceWide,
                };
                let p = self.participant(&words[1])?;
                let d = p
                    .agent
                    .register_export(&space, &words[2], "", range, visibility)
                    .map_err(|e| e.to_string())?;
                let owner = p.user.clone();
                self.log.push(format!("export {} = {}", words[2], d.id));
                self.exports.insert(words[2].clone(), (d.id, owner));
            }
            "import" => {
                arity(5)?;
                let (export_id, _) = self.export(&words[3])?;
                let target = RangeRef::parse(&words[4]).map_err(|e| e.to_string())?;
                let b = self
                    .participant(&words[1])?
                    .agent
                    .bind_import(&export_id, target)
                    .map_err(|e| e.to_string())?;
                self.log.push(format!("import {} = {}", words[2], b.id));
                self.bindings.insert(words[2].clone(), b.id);
            }
            "tick" => {
                let names: Vec<String> = if words.len() > 1 {
                    words[1..].to_vec()
                } else {
                    self.agents.iter().filter(|(_, p)| p.running).map(|(n, _)| n.clone()).collect()
                };
                for n in names {
                    self.tick(&n)?;
                }
            }
            "offline" | "online" => {
                arity(2)?;
                let on = words[0] == "online";
                self.participant(&words[1])?.link.set_online(on);
            }
            "stop" | "start" => {
                arity(2)?;
                let run = words[0] == "start";
                self.participant(&words[1])?.running = run;
            }
            "drain" => {
                let report = self.platform().drain();
                let committed: Vec<String> = report.committed.iter().map(|(id, v)| format!("{id}@{v}")).collect();
                self.log.push(format!("drain: committed [{}]", committed.join(",")));
                for (wb, why) in report.diagnostics {
                    self.log.push(format!("  {wb}: {why}"));
                }
            }
            "revoke" => {
                arity(2)?;
                let (id, owner) = self.export(&words[1])?;
                self.platform().revoke_export(&owner, &id).map_err(|e| e.to_string())?;
            }
            "expect" => {
                arity(4)?;
                let expected = CellValue::from_input(&words[3..].join(" "));
                let actual = self
                    .value(&words[1], &words[2])
                    .ok_or_else(|| format!("bad agent or address in `{}`", words.join(" ")))?;
                let ok = actual == expected;
                let verdict = if ok { "ok" } else { "FAILED" };
                self.check(
                    ok,
                    format!("expect {} {} = {expected:?}: {verdict} (got {actual:?})", words[1], words[2]),
                );
            }
            "expect-version" => {
                arity(3)?;
                let (id, owner) = self.export(&words[1])?;
                let want: u64 = words[2].parse().map_err(|_| format!("bad version `{}`", words[2]))?;
                let got = self
                    .platform()
                    .get_export(&owner, &id)
                    .map_err(|e| e.to_string())?
                    .latest_version;
                let verdict = if got == want { "ok" } else { "FAILED" };
                self.check(
                    got == want,
                    format!("expect-version {} = {want}: {verdict} (got {got})", words[1]),
                );
            }
            other => return Err(format!("unknown directive `{other}`")),
        }
        Ok(())
    }
}

impl Default for Replay {
    fn default() -> Self {
        Self::new()
    }
}

impl Replay {
    /// Continues with more trace lines. Line numbers in errors count from
    /// the start of `trace`.
    pub fn run(&mut self, trace: &str) -> Result<(), ScenarioError> {
        for (i, raw) in trace.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(code, _)| code).trim();
            if line.is_empty() {
                continue;
            }
            let fail = |message: String| ScenarioError { line: i + 1, message };
            let words = shlex::split(line).ok_or_else(|| fail("unbalanced quotes".into()))?;
            self.step(&words).map_err(fail)?;
        }
        Ok(())
    }
}

/// Runs a trace. Directive errors abort; failed expectations are collected.
pub fn replay(trace: &str) -> Result<Replay, ScenarioError> {
    let mut r = Replay::new();
    r.run(trace)?;
    Ok(r)
}
