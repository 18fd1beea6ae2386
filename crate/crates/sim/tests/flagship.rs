use std::time::Instant;

use converge_sim::netsim::Command;
use converge_sim::scenario::Scenario;
use converge_sim::trace::{metrics_from_records, Payload};
use converge_sim::{run_scenario, Policy, Simulation};

#[test]
fn reactive_and_proactive_outage() {
    let scenario = Scenario::flagship();
    let tick = scenario.sim.tick_s;
    let started = Instant::now();
    let reactive = run_scenario(&scenario, Policy::Reactive, "r").unwrap();
    let proactive = run_scenario(&scenario, Policy::Proactive, "p").unwrap();
    assert!(started.elapsed().as_secs_f64() < 5.0);

    // Detection window (4 ticks) + full sweep of 16 beams at 5 ms (8 ticks).
    assert!((reactive.summary.outage_s - 0.120).abs() <= tick + 1e-9, "{:?}", reactive.summary);
    assert!(proactive.summary.outage_s <= 0.020 + 1e-9, "{:?}", proactive.summary);
    assert!(proactive.summary.mean_throughput_bps > reactive.summary.mean_throughput_bps);

    let lat = &reactive.summary.switch_latencies;
    assert_eq!(lat.len(), 1);
    assert!(!lat[0].proactive && (lat[0].latency_s - 0.12).abs() < 1e-9);
    assert!(proactive.summary.switch_latencies.iter().all(|l| l.proactive));
}

#[test]
fn summary_agrees_with_record_stream() {
    let scenario = Scenario::flagship();
    for policy in [Policy::Reactive, Policy::Proactive] {
        let out = run_scenario(&scenario, policy, "s").unwrap();
        let m = metrics_from_records(&out.records);
        assert_eq!(m.radio_records as u64, out.summary.ticks);
        assert!((m.outage_s - out.summary.outage_s).abs() < 1e-9);
        assert!((m.mean_throughput_bps - out.summary.mean_throughput_bps).abs() < 1e-3);
        assert_eq!(m.switch_count, out.summary.switch_count);
    }
}

#[test]
fn runs_are_deterministic_and_timestamps_monotone() {
    let scenario = Scenario::flagship();
    let a = run_scenario(&scenario, Policy::Proactive, "d").unwrap();
    let b = run_scenario(&scenario, Policy::Proactive, "d").unwrap();
    assert_eq!(a.records, b.records);
    let mut last = std::collections::BTreeMap::new();
    for r in &a.records {
        let prev = last.insert(r.stream_key(), r.timestamp_s).unwrap_or(f64::NEG_INFINITY);
        assert!(r.timestamp_s >= prev);
    }
    assert!(a.records.iter().any(|r| matches!(r.payload, Payload::Detection(_))));
    assert!(a.records.iter().any(|r| matches!(r.payload, Payload::RisProfile(_))));
}

#[test]
fn removing_the_blocker_removes_the_outage() {
    let scenario = Scenario::flagship();
    let mut sim = Simulation::new(&scenario, Policy::Reactive, "c").unwrap();
    sim.enqueue(Command::RemoveObstacle { obstacle_id: "blocker".into() }).unwrap();
    let first = sim.step(None).unwrap();
    let echo = first.records.iter().find_map(|r| match &r.payload {
        Payload::Event(e) if e.event == "obstacle_removed" => Some(r.device_id.as_str()),
        _ => None,
    });
    assert_eq!(echo, Some("blocker"));
    while !sim.is_finished() {
        sim.step(None).unwrap();
    }
    assert_eq!(sim.summary().outage_ticks, 0);
    assert!(sim.enqueue(Command::RemoveObstacle { obstacle_id: "ghost".into() }).is_err());
}

#[test]
fn failed_step_leaves_world_untouched() {
    let scenario = Scenario::flagship();
    let mut sim = Simulation::new(&scenario, Policy::Reactive, "t").unwrap();
    sim.step(None).unwrap();
    let before = sim.world().clone();
    // Valid when queued, invalid once the first removal has happened.
    sim.enqueue(Command::RemoveObstacle { obstacle_id: "blocker".into() }).unwrap();
    sim.enqueue(Command::RemoveObstacle { obstacle_id: "blocker".into() }).unwrap();
    let queued = sim.world().clone();
    assert!(sim.step(None).is_err());
    assert_eq!(sim.world(), &queued);
    assert_eq!(queued.tick, before.tick);
}
