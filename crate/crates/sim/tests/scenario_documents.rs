use converge_sim::scenario::{Scenario, ScenarioError, FLAGSHIP};
use converge_sim::scene::load_scene;

#[test]
fn flagship_document_loads() {
    let s = Scenario::parse(FLAGSHIP).unwrap();
    assert_eq!(s.name, "flagship-blockage");
    assert_eq!(s.scene.devices.len(), 5);
    assert_eq!(s.scene.obstacles.len(), 1);
    let scene = load_scene(FLAGSHIP).unwrap();
    assert_eq!(scene, s.scene);
}

#[test]
fn validation_errors_name_the_field() {
    let cases = [
        ("position = [8.0, 3.0, 1.5]", "position = [8.0, 7.0, 1.5]", "devices.ue.position"),
        ("tick_s = 0.010", "tick_s = 0.0", "sim.tick_s"),
        ("count = 16", "count = 0", "codebook"),
        ("tx = \"gnb\"", "tx = \"ue\"", "sim.tx"),
    ];
    for (from, to, field) in cases {
        let doc = FLAGSHIP.replace(from, to);
        assert_ne!(doc, FLAGSHIP, "{from}");
        match Scenario::parse(&doc) {
            Err(ScenarioError::Validation { field: f, .. }) => assert!(f.starts_with(field), "{f} vs {field}"),
            other => panic!("{field}: {other:?}"),
        }
    }
}

#[test]
fn duplicate_ids_are_rejected() {
    let doc = FLAGSHIP.replace("id = \"cam_east\"", "id = \"cam_south\"");
    assert!(matches!(Scenario::parse(&doc), Err(ScenarioError::Validation { .. })));
    let doc = FLAGSHIP.replace("id = \"blocker\"", "id = \"lis\"");
    assert!(matches!(Scenario::parse(&doc), Err(ScenarioError::Validation { .. })));
}

#[test]
fn waypoints_must_increase() {
    let doc = FLAGSHIP.replace("t = 4.505", "t = 0.5");
    let err = Scenario::parse(&doc).unwrap_err();
    assert!(err.field().unwrap().starts_with("trajectories[0]"), "{err}");
}
