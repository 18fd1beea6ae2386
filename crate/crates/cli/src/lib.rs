//! The `converge` command line.
//!
//! Exit codes: 0 on success, 1 for domain errors (invalid scenario, failed
//! simulation, incompatible datasets), 2 for I/O errors.

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Parser, Subcommand};
use converge_core::dataset::{self, DatasetError, Header};
use converge_core::{Core, CoreConfig, PolicyStore};
use converge_sim::trace::{metrics_from_records, StreamMetrics};
use converge_sim::{run_scenario, Policy, Scenario, TraceRecord};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

fn io_err(what: impl std::fmt::Display, e: std::io::Error) -> CliError {
    CliError::Io(format!("{what}: {e}"))
}

#[derive(Debug, Parser)]
#[command(name = "converge", version, about = "Chamber digital twin: scenarios, local runs and the REST service")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn policy_parser() -> impl TypedValueParser<Value = Policy> {
    PossibleValuesParser::new(["reactive", "proactive"]).map(|s| s.parse::<Policy>().expect("restricted by possible values"))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario document and report field-level problems.
    Validate {
        /// Scenario TOML file, or `flagship` for the built-in scenario.
        #[arg(long, env = "CONVERGE_SCENARIO")]
        scenario: String,
    },
    /// Run a scenario in-process and write its dataset.
    Run {
        #[arg(long, env = "CONVERGE_SCENARIO")]
        scenario: String,
        #[arg(long, env = "CONVERGE_POLICY", default_value = "reactive", value_parser = policy_parser())]
        policy: Policy,
        /// Overrides the scenario's detection-noise seed.
        #[arg(long, env = "CONVERGE_SEED")]
        seed: Option<u64>,
        /// Dataset file to write (export format).
        #[arg(long, env = "CONVERGE_OUT")]
        out: PathBuf,
        /// Session id stamped on every record.
        #[arg(long, env = "CONVERGE_SESSION_ID", default_value = "local")]
        session_id: String,
    },
    /// Print metric deltas (a minus b) between two exported datasets.
    Compare { a: PathBuf, b: PathBuf },
    /// Serve the REST API until SIGTERM or ctrl-c.
    Serve {
        #[arg(long, env = "CONVERGE_LISTEN", default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Access policy TOML (principals, tokens, operations).
        #[arg(long, env = "CONVERGE_POLICY_FILE")]
        policy_file: PathBuf,
        #[arg(long, env = "CONVERGE_DATA_DIR", default_value = "converge-data")]
        data_dir: PathBuf,
        /// Directory searched for `<scenario_ref>.toml`.
        #[arg(long, env = "CONVERGE_SCENARIO_DIR")]
        scenario_dir: Option<PathBuf>,
        /// Built dashboard served under /ui/.
        #[arg(long, env = "CONVERGE_UI_DIR")]
        ui_dir: Option<PathBuf>,
        /// Simulated seconds per wall-clock second; 0 runs unpaced.
        #[arg(long, env = "CONVERGE_PACE", default_value_t = 1.0)]
        pace: f64,
        #[arg(long, env = "CONVERGE_MAX_RUNNING", default_value_t = 8)]
        max_running: usize,
    },
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { scenario } => {
            print!("{}", cmd_validate(&scenario)?);
            Ok(())
        }
        Command::Run { scenario, policy, seed, out, session_id } => {
            print!("{}", cmd_run(&scenario, policy, seed, &out, &session_id)?);
            Ok(())
        }
        Command::Compare { a, b } => {
            print!("{}", cmd_compare(&a, &b)?);
            Ok(())
        }
        Command::Serve { listen, policy_file, data_dir, scenario_dir, ui_dir, pace, max_running } => {
            let mut config = CoreConfig::new(data_dir);
            config.scenario_dir = scenario_dir;
            config.pace = pace;
            config.max_running = max_running;
            cmd_serve(listen, &policy_file, config, ui_dir)
        }
    }
}

/// Reads a scenario path; `flagship` names the built-in scenario unless a
/// file of that name exists.
pub fn load_scenario(arg: &str) -> Result<Scenario, CliError> {
    let path = Path::new(arg);
    let doc = match std::fs::read_to_string(path) {
        Ok(doc) => doc,
        Err(_) if arg == "flagship" => return Ok(Scenario::flagship()),
        Err(e) => return Err(io_err(format_args!("cannot read {arg}"), e)),
    };
    Scenario::parse(&doc).map_err(|e| CliError::Domain(format!("{arg}: {e}")))
}

pub fn cmd_validate(scenario: &str) -> Result<String, CliError> {
    let s = load_scenario(scenario)?;
    let d = s.scene.chamber_dims;
    Ok(format!(
        "{scenario}: ok\n  name      {}\n  chamber   {} x {} x {} m\n  devices   {}\n  obstacles {}\n  cameras   {}\n  duration  {} s at {} ms ticks\n",
        s.name,
        d.x,
        d.y,
        d.z,
        s.scene.devices.keys().cloned().collect::<Vec<_>>().join(", "),
        s.scene.obstacles.len(),
        s.cameras.len(),
        s.sim.duration_s,
        s.sim.tick_s * 1e3,
    ))
}

pub fn cmd_run(scenario: &str, policy: Policy, seed: Option<u64>, out: &Path, session_id: &str) -> Result<String, CliError> {
    let mut s = load_scenario(scenario)?;
    if let Some(seed) = seed {
        s.sim.rng_seed = seed;
    }
    let run = run_scenario(&s, policy, session_id).map_err(|e| CliError::Domain(format!("simulation failed: {e}")))?;
    let bytes = dataset::encode(&format!("ds-{session_id}"), session_id, &run.records);
    std::fs::write(out, &bytes).map_err(|e| io_err(format_args!("cannot write {}", out.display()), e))?;
    let header = dataset::decode_header(&bytes).map_err(|e| CliError::Domain(e.to_string()))?;

    let sum = &run.summary;
    let mut text = String::new();
    let _ = writeln!(text, "policy           {}", policy.as_str());
    let _ = writeln!(text, "duration         {:.3} s ({} ticks)", sum.duration_s, sum.ticks);
    let _ = writeln!(text, "outage           {:.1} ms ({} ticks)", sum.outage_s * 1e3, sum.outage_ticks);
    let _ = writeln!(text, "mean throughput  {:.3} Mbps", sum.mean_throughput_bps / 1e6);
    let _ = writeln!(text, "switches         {}", sum.switch_count);
    for l in &sum.switch_latencies {
        let kind = if l.proactive { "proactive" } else { "reactive" };
        let _ = writeln!(text, "  at {:.3} s  {kind}  latency {:.1} ms", l.completed_at_s, l.latency_s * 1e3);
    }
    let _ = writeln!(text, "records          {}", run.records.len());
    let _ = writeln!(text, "dataset          {} (crc64 {})", out.display(), header.checksum);
    Ok(text)
}

fn read_dataset(path: &Path) -> Result<(Header, Vec<TraceRecord>), CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(format_args!("cannot read {}", path.display()), e))?;
    dataset::decode(&bytes).map_err(|e| match e {
        DatasetError::UnsupportedSchema(_) => CliError::Domain(format!("{}: schema mismatch: {e}", path.display())),
        e => CliError::Domain(format!("{}: {e}", path.display())),
    })
}

pub fn cmd_compare(a: &Path, b: &Path) -> Result<String, CliError> {
    let (ha, ra) = read_dataset(a)?;
    let (hb, rb) = read_dataset(b)?;
    if ha.schema_version != hb.schema_version {
        return Err(CliError::Domain(format!(
            "schema mismatch: {} has version {}, {} has version {}",
            a.display(),
            ha.schema_version,
            b.display(),
            hb.schema_version
        )));
    }
    let (ma, mb) = (metrics_from_records(&ra), metrics_from_records(&rb));
    Ok(render_delta(a, b, &ma, &mb))
}

fn render_delta(a: &Path, b: &Path, ma: &StreamMetrics, mb: &StreamMetrics) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "a = {}", a.display());
    let _ = writeln!(text, "b = {}", b.display());
    let _ = writeln!(text, "{:<22}{:>14}{:>14}{:>14}", "metric", "a", "b", "a - b");
    let rows = [
        ("outage_ms", ma.outage_s * 1e3, mb.outage_s * 1e3, 1),
        ("mean_throughput_mbps", ma.mean_throughput_bps / 1e6, mb.mean_throughput_bps / 1e6, 3),
        ("switch_count", ma.switch_count as f64, mb.switch_count as f64, 0),
        ("radio_records", ma.radio_records as f64, mb.radio_records as f64, 0),
    ];
    for (name, x, y, p) in rows {
        // Round first so an all-equal comparison prints 0 rather than -0.
        let d = round_to(x - y, p) + 0.0;
        let _ = writeln!(text, "{name:<22}{x:>14.p$}{y:>14.p$}{d:>+14.p$}");
    }
    text
}

fn round_to(x: f64, places: usize) -> f64 {
    let k = 10f64.powi(places as i32);
    (x * k).round() / k
}

pub fn cmd_serve(listen: SocketAddr, policy_file: &Path, config: CoreConfig, ui_dir: Option<PathBuf>) -> Result<(), CliError> {
    let policies = PolicyStore::load(policy_file).map_err(|e| match e {
        converge_core::CoreError::Io(e) => io_err(format_args!("cannot read {}", policy_file.display()), e),
        e => CliError::Domain(format!("{}: {e}", policy_file.display())),
    })?;
    let core = Core::open(config, policies).map_err(|e| match e {
        converge_core::CoreError::Io(e) => io_err("cannot open data directory", e),
        e => CliError::Domain(e.to_string()),
    })?;
    let core = Arc::new(core);
    for id in &core.recovery().aborted {
        eprintln!("recovered session {id}: was RUNNING at an unclean stop, now ABORTED");
    }

    let rt = tokio::runtime::Runtime::new().map_err(|e| io_err("cannot start runtime", e))?;
    rt.block_on(async move {
        let listener =
            tokio::net::TcpListener::bind(listen).await.map_err(|e| io_err(format_args!("cannot listen on {listen}"), e))?;
        let addr = listener.local_addr().map_err(|e| io_err("listener", e))?;
        println!("listening on http://{addr}");
        tracing::info!(%addr, "serving");

        let app = converge_core::api::router(core.clone(), ui_dir);
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let server = axum::serve(listener, app).with_graceful_shutdown(async move {
            let _ = stop_rx.await;
        });
        let mut server = std::pin::pin!(std::future::IntoFuture::into_future(server));
        tokio::select! {
            r = &mut server => return r.map_err(|e| io_err("server", e)),
            _ = shutdown_signal() => {}
        }

        let c = core.clone();
        let aborted = tokio::task::spawn_blocking(move || c.shutdown()).await.unwrap_or_default();
        for id in &aborted {
            eprintln!("session {id} ABORTED by shutdown");
        }
        let _ = stop_tx.send(());
        // Event streams never end by themselves; give ordinary requests a
        // moment to finish and then stop regardless.
        let _ = tokio::time::timeout(Duration::from_secs(2), server).await;
        eprintln!("stopped");
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn policy_flag_accepts_only_known_policies() {
        let cli = Cli::try_parse_from(["converge", "run", "--scenario", "x", "--out", "o", "--policy", "proactive"]).unwrap();
        assert!(matches!(cli.command, Command::Run { policy: Policy::Proactive, .. }));
        assert!(Cli::try_parse_from(["converge", "run", "--scenario", "x", "--out", "o", "--policy", "greedy"]).is_err());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let e = load_scenario("/nonexistent/scenario.toml").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert_eq!(load_scenario("flagship").unwrap(), Scenario::flagship());
    }

    #[test]
    fn delta_of_equal_metrics_is_zero() {
        let m = StreamMetrics { radio_records: 10, outage_s: 0.12, mean_throughput_bps: 3.4e8, switch_count: 1 };
        let text = render_delta(Path::new("a"), Path::new("b"), &m, &m);
        assert!(!text.contains("-0"), "{text}");
        assert_eq!(text.matches("+0").count(), 4, "{text}");
    }
}
