//! The shipped scenario files load, validate and round-trip.

use std::path::PathBuf;

use robotune::stack::{
    build_config_space, load_scenario, parse_scenario, serialize_scenario, AppClass,
    ADAPTOR_MIN_RATE_HZ,
};

fn scenario_paths() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    paths.sort();
    paths
}

#[test]
fn every_scenario_loads_and_round_trips() {
    let paths = scenario_paths();
    assert!(paths.len() >= 8);
    for p in paths {
        let sc = load_scenario(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        let again = parse_scenario(&serialize_scenario(&sc)).unwrap();
        assert_eq!(sc, again, "{}", p.display());
    }
}

#[test]
fn adaptors_sit_only_on_high_volume_non_core_edges() {
    for p in scenario_paths() {
        let sc = load_scenario(&p).unwrap();
        let space = build_config_space(&sc.stack, sc.settings.budget_cores);
        assert_eq!(space.quota_knobs.len(), sc.stack.nodes.len());
        for k in &space.adaptor_knobs {
            assert!(sc.stack.topic_rate(&k.edge.topic) > ADAPTOR_MIN_RATE_HZ);
            let sub = sc.stack.node(&k.edge.subscriber).unwrap();
            let publisher_non_core = sc
                .stack
                .publishers(&k.edge.topic)
                .any(|n| n.class == AppClass::NonCore);
            assert!(
                sub.class == AppClass::NonCore || publisher_non_core,
                "{}",
                k.edge
            );
        }
    }
}

#[test]
fn timeline_scenario_declares_the_terrain_switch() {
    let sc = load_scenario(
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/basic_to_terrain.toml"),
    )
    .unwrap();
    let t = sc.timeline.as_ref().unwrap();
    assert!(t.initially_stopped.contains("terrain_controller"));
    assert!(t.events.iter().all(|e| e.time == 50.0));
    assert!(sc.environment("outdoor").is_some());
}
