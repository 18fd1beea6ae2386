//! `converge serve` as a real process: startup, signals, restart.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use converge_core::dataset;
use converge_core::repository::Repository;
use converge_core::SessionState;
use converge_sim::TraceRecord;
use serde_json::{json, Value};

const POLICY: &str = r#"
[[principals]]
name = "alice"
token = "alice-token"
operations = ["*"]
max_sessions = 2
"#;

struct Server {
    child: Child,
    addr: SocketAddr,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn command(dir: &Path, listen: &str) -> Command {
    std::fs::write(dir.join("policy.toml"), POLICY).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_converge"));
    cmd.args(["serve", "--listen", listen, "--pace", "1"])
        .arg("--policy-file")
        .arg(dir.join("policy.toml"))
        .arg("--data-dir")
        .arg(dir.join("data"))
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    cmd
}

fn start(dir: &Path) -> Server {
    let mut child = command(dir, "127.0.0.1:0").spawn().unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap_or_else(|| panic!("unexpected {line:?}"));
    Server { addr: addr.parse().unwrap(), child }
}

fn http(addr: SocketAddr, method: &str, path: &str, body: Option<Value>) -> (u16, Vec<u8>) {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    let body = body.map(|b| b.to_string()).unwrap_or_default();
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: test\r\nAuthorization: Bearer alice-token\r\nConnection: close\r\n\
         Content-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = Vec::new();
    s.read_to_end(&mut raw).unwrap();
    let split = raw.windows(4).position(|w| w == b"\r\n\r\n").unwrap();
    let head = String::from_utf8_lossy(&raw[..split]).into_owned();
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    let mut body = raw[split + 4..].to_vec();
    if head.to_ascii_lowercase().contains("transfer-encoding: chunked") {
        body = dechunk(&body);
    }
    (status, body)
}

fn dechunk(mut b: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    loop {
        let eol = b.windows(2).position(|w| w == b"\r\n").unwrap();
        let n = usize::from_str_radix(std::str::from_utf8(&b[..eol]).unwrap().trim(), 16).unwrap();
        if n == 0 {
            return out;
        }
        out.extend_from_slice(&b[eol + 2..eol + 2 + n]);
        b = &b[eol + 4 + n..];
    }
}

fn json_of(r: (u16, Vec<u8>)) -> (u16, Value) {
    (r.0, serde_json::from_slice(&r.1).unwrap_or(Value::Null))
}

/// Creates and starts a flagship session, then waits until it has acked
/// at least `min_records`.
fn start_session(addr: SocketAddr, min_records: usize) -> String {
    let (status, s) = json_of(http(addr, "POST", "/v1/sessions", Some(json!({ "scenario_ref": "flagship" }))));
    assert_eq!(status, 201, "{s}");
    let id = s["session_id"].as_str().unwrap().to_string();
    for target in ["SCHEDULED", "RUNNING"] {
        let (status, s) = json_of(http(addr, "POST", &format!("/v1/sessions/{id}/transition"), Some(json!({ "target": target }))));
        assert_eq!(status, 200, "{s}");
    }
    let start = Instant::now();
    while acked(addr, &id).len() < min_records {
        assert!(start.elapsed() < Duration::from_secs(20));
        std::thread::sleep(Duration::from_millis(20));
    }
    id
}

fn acked(addr: SocketAddr, id: &str) -> Vec<TraceRecord> {
    let (status, body) = http(addr, "GET", &format!("/v1/datasets/ds-{id}/traces"), None);
    assert_eq!(status, 200);
    body.split(|&b| b == b'\n').filter(|l| !l.is_empty()).map(|l| serde_json::from_slice(l).unwrap()).collect()
}

#[test]
fn health_and_occupied_port() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path());
    assert_eq!(http(server.addr, "GET", "/v1/healthz", None).0, 200);
    assert_eq!(http(server.addr, "GET", "/ui/", None).0, 200);

    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let other = tempfile::tempdir().unwrap();
    let out = command(other.path(), &taken.local_addr().unwrap().to_string()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot listen"));

    let bad = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_converge"))
        .args(["serve", "--listen", "127.0.0.1:0", "--policy-file"])
        .arg(bad.path().join("absent.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sigterm_aborts_running_sessions_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let mut server = start(dir.path());
    let id = start_session(server.addr, 20);
    let seen = acked(server.addr, &id);

    let rc = unsafe { libc::kill(server.child.id() as i32, libc::SIGTERM) };
    assert_eq!(rc, 0);
    let status = server.child.wait().unwrap();
    assert!(status.success(), "{status:?}");
    let mut err = String::new();
    server.child.stderr.take().unwrap().read_to_string(&mut err).unwrap();
    assert!(err.contains(&format!("session {id} ABORTED")), "{err}");

    // Nothing is left for recovery to do.
    let (repo, recovery) = Repository::open(dir.path().join("data")).unwrap();
    assert!(recovery.aborted.is_empty());
    assert_eq!(repo.session(&id).unwrap().state, SessionState::Aborted);
    let (_, records) = dataset::decode(&repo.export(&format!("ds-{id}")).unwrap()).unwrap();
    assert_eq!(&records[..seen.len()], &seen[..]);
}

#[test]
fn sigkill_then_restart_recovers_as_aborted() {
    let dir = tempfile::tempdir().unwrap();
    let mut server = start(dir.path());
    let id = start_session(server.addr, 20);
    let seen = acked(server.addr, &id);
    server.child.kill().unwrap();
    server.child.wait().unwrap();
    drop(server);

    let mut server = start(dir.path());
    let (status, s) = json_of(http(server.addr, "GET", &format!("/v1/sessions/{id}"), None));
    assert_eq!(status, 200);
    assert_eq!(s["state"], "ABORTED");
    let (status, bytes) = http(server.addr, "GET", &format!("/v1/datasets/ds-{id}/export"), None);
    assert_eq!(status, 200);
    let (header, records) = dataset::decode(&bytes).unwrap();
    assert!(records.len() >= seen.len());
    assert_eq!(&records[..seen.len()], &seen[..]);
    assert_eq!(header.record_count as usize, records.len());

    // The recovered service keeps working.
    let next = start_session(server.addr, 1);
    assert_ne!(next, id);
    let _ = server.child.kill();
    let mut err = String::new();
    server.child.stderr.take().unwrap().read_to_string(&mut err).unwrap();
    assert!(err.contains(&format!("recovered session {id}")), "{err}");
}
