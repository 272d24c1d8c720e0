use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_discom");
const ADMIN: &str = "admin-secret";

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

struct Env {
    dir: tempfile::TempDir,
    server: String,
}

impl Env {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        Self {
            server: format!("http://127.0.0.1:{}", free_port()),
            dir,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn command(&self) -> Command {
        let mut c = Command::new(BIN);
        for (k, _) in std::env::vars() {
            if k.starts_with("DISCOM_") || k == "RUST_LOG" {
                c.env_remove(k);
            }
        }
        c.env("DISCOM_CONFIG", self.path("config.toml"));
        c.env("DISCOM_SERVER", &self.server);
        c
    }

    fn run(&self, token: Option<&str>, args: &[&str]) -> Output {
        let mut c = self.command();
        if let Some(t) = token {
            c.env("DISCOM_TOKEN", t);
        }
        c.args(args).output().unwrap()
    }

    fn ok(&self, token: Option<&str>, args: &[&str]) -> String {
        let out = self.run(token, args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap().trim().to_string()
    }

    fn json(&self, token: Option<&str>, args: &[&str]) -> Value {
        let mut args = args.to_vec();
        args.push("--json");
        serde_json::from_str(&self.ok(token, &args)).unwrap()
    }

    fn serve(&self) -> Child {
        let listen = self.server.trim_start_matches("http://").to_string();
        let mut child = self
            .command()
            .args(["serve", "--listen", &listen, "--admin-token", ADMIN, "--sweep-secs", "1"])
            .arg("--data-dir")
            .arg(self.path("data"))
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        wait_for_line(&mut child, "listening on");
        child
    }
}

fn wait_for_line(child: &mut Child, prefix: &str) -> String {
    let stdout = child.stdout.take().unwrap();
    let mut lines = BufReader::new(stdout).lines();
    let line = lines.next().expect("child exited").unwrap();
    assert!(line.starts_with(prefix), "unexpected output: {line}");
    // keep draining so the child never blocks on a full pipe
    std::thread::spawn(move || for _ in lines {});
    line
}

fn wait_until(timeout: Duration, mut f: impl FnMut() -> bool) -> bool {
    let end = Instant::now() + timeout;
    while Instant::now() < end {
        if f() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    false
}

fn stop(mut child: Child) {
    let _ = child.kill();
    let _ = child.wait();
}

fn wb(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn administration_and_offline_contribution() {
    let env = Env::new();
    let server = env.serve();
    let admin = Some(ADMIN);
    for (u, n) in [("carl", "Carl Black"), ("john", "John Smith")] {
        env.ok(admin, &["admin", "user", "add", u, "--secret", &format!("{u}-pw"), "--name", n]);
    }
    let users = env.json(admin, &["admin", "user", "list"]);
    assert_eq!(users.as_array().unwrap().len(), 2);

    let carl = env.ok(None, &["login", "carl", "--secret", "carl-pw"]);
    let john = env.ok(None, &["login", "john", "--secret", "john-pw"]);
    env.ok(Some(&carl), &["space", "create", "Area North 2010"]);
    env.ok(Some(&carl), &["space", "add-member", "john", "--role", "exporter"]);
    let spaces = env.json(Some(&carl), &["space", "list"]);
    assert_eq!(spaces[0]["members"].as_object().unwrap().len(), 2);

    let book = env.path("john.xml");
    env.ok(Some(&john), &["cell", "set", "Sales!B2", "7", "--workbook", wb(&book)]);
    let id = env.ok(
        Some(&john),
        &["export", "register", "--range", "Sales!A2:D6", "--to", "carl", "--workbook", wb(&book)],
    );
    assert!(id.starts_with("ex-"), "{id}");
    let listed = env.json(Some(&carl), &["export", "list"]);
    assert_eq!(listed[0]["id"], id.as_str());
    assert_eq!(listed[0]["latest_version"], 0);

    // the platform goes away; the agent keeps working locally
    stop(server);
    let agent_url = format!("http://127.0.0.1:{}", free_port());
    let mut agent = env
        .command()
        .env("DISCOM_TOKEN", &john)
        .args(["agent", "run", "--interval", "1", "--workbook", wb(&book)])
        .args(["--listen", agent_url.trim_start_matches("http://")])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    wait_for_line(&mut agent, "agent for");
    let set = env.run(None, &["cell", "set", "Sales!B2", "10", "--agent", &agent_url]);
    assert!(set.status.success(), "{}", String::from_utf8_lossy(&set.stderr));
    let got = env.ok(None, &["cell", "get", "Sales!B2", "--agent", &agent_url]);
    assert_eq!(got, "10");

    // reconnect: the cached contribution arrives
    let server = env.serve();
    let arrived = wait_until(Duration::from_secs(10), || {
        let list = env.json(Some(&carl), &["export", "list"]);
        list[0]["latest_version"].as_u64().unwrap_or(0) >= 1
    });
    assert!(arrived, "contribution never reached the platform");
    stop(agent);
    stop(server);
}

#[test]
fn exit_codes() {
    let env = Env::new();
    // usage errors
    assert_eq!(env.run(None, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(env.run(None, &["space", "add-member"]).status.code(), Some(1));
    assert_eq!(env.run(None, &["--help"]).status.code(), Some(0));
    // nothing listening
    assert_eq!(env.run(Some("t"), &["space", "list"]).status.code(), Some(2));

    let server = env.serve();
    // rejected by the server
    assert_eq!(env.run(None, &["login", "nobody", "--secret", "x"]).status.code(), Some(1));
    assert_eq!(env.run(Some("bogus"), &["space", "list"]).status.code(), Some(1));
    assert_eq!(env.run(Some("bogus"), &["admin", "user", "list"]).status.code(), Some(1));
    let out = env.run(Some("bogus"), &["space", "list", "--json"]);
    let body: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(body["exit_code"], 1);
    stop(server);
}

#[test]
fn login_save_persists_the_session() {
    let env = Env::new();
    let server = env.serve();
    env.ok(Some(ADMIN), &["admin", "user", "add", "carl", "--secret", "pw"]);
    env.ok(None, &["login", "carl", "--secret", "pw", "--save"]);
    // no token on the command line: the saved one is used
    env.ok(None, &["space", "create", "Area North 2010"]);
    let spaces = env.json(None, &["space", "list"]);
    assert_eq!(spaces.as_array().unwrap().len(), 1);
    stop(server);
}

#[test]
fn scenario_replay_is_deterministic() {
    let env = Env::new();
    let trace = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/car-dealer.trace");
    let a = env.path("a.json");
    let b = env.path("b.json");
    env.ok(None, &["scenario", "replay", trace, "--snapshot", wb(&a)]);
    env.ok(None, &["scenario", "replay", trace, "--snapshot", wb(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let bad = env.path("bad.trace");
    std::fs::write(&bad, "user carl\nagent a carl\nset a S!A1 1\nexpect a S!A1 2\n").unwrap();
    assert_eq!(env.run(None, &["scenario", "replay", wb(&bad)]).status.code(), Some(1));
}
