#![allow(dead_code)]

use std::path::Path;
use std::time::{Duration, Instant};

use converge_core::{Core, CoreConfig, PolicyStore, Session, SessionState};

pub const POLICY: &str = r#"
[[principals]]
name = "alice"
token = "alice-token"
operations = ["*"]
max_sessions = 4

[[principals]]
name = "bob"
token = "bob-token"
operations = ["create_session", "read_session", "control_session", "read_dataset"]
max_sessions = 1

[[principals]]
name = "reader"
token = "reader-token"
operations = ["read_dataset"]
"#;

/// The flagship with its LIS removed.
pub const NO_LIS: &str = r#"
schema_version = 1
[chamber]
dims = [10.0, 6.0, 4.0]
[sim]
duration_s = 1.0
[[devices]]
id = "gnb"
kind = "gnb"
position = [1.0, 3.0, 2.0]
[[devices]]
id = "ue"
kind = "ue"
position = [8.0, 3.0, 1.5]
yaw_deg = 180.0
"#;

pub fn open_core(dir: &Path, pace: f64) -> Core {
    std::fs::create_dir_all(dir.join("scenarios")).unwrap();
    std::fs::write(dir.join("scenarios/no_lis.toml"), NO_LIS).unwrap();
    let mut config = CoreConfig::new(dir.join("data"));
    config.scenario_dir = Some(dir.join("scenarios"));
    config.pace = pace;
    Core::open(config, PolicyStore::parse(POLICY).unwrap()).unwrap()
}

pub fn wait_terminal(core: &Core, principal: &str, id: &str, timeout: Duration) -> Session {
    let start = Instant::now();
    loop {
        let s = core.session(principal, id).unwrap();
        if s.state.is_terminal() {
            return s;
        }
        assert!(start.elapsed() < timeout, "session {id} still {} after {timeout:?}", s.state);
        std::thread::sleep(Duration::from_millis(5));
    }
}

pub fn run_to_end(core: &Core, principal: &str, id: &str) -> Session {
    core.transition(principal, id, SessionState::Scheduled).unwrap();
    core.transition(principal, id, SessionState::Running).unwrap();
    wait_terminal(core, principal, id, Duration::from_secs(60))
}
