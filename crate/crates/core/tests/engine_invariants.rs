//! Property tests of the simulation engine over randomly generated stacks.

mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use robotune::adaptor::AdaptorSet;
use robotune::sim::Engine;
use robotune::stack::load_scenario;

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn engine_invariants_hold(case in common::case()) {
        common::check_case(&case)?;
    }

    #[test]
    fn open_adaptors_are_transparent(case in common::case()) {
        common::check_transparency(&case)?;
    }
}

#[test]
fn transparent_adaptor_set_matches_unadapted_scenarios() {
    for entry in std::fs::read_dir(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios")).unwrap()
    {
        let path = entry.unwrap().path();
        let sc = load_scenario(&path).unwrap();
        let settings = sc.settings.with_duration(3.0);
        let running = sc.stack.nodes.iter().map(|n| n.id.clone()).collect();
        let quotas = BTreeMap::new();
        let mut plain =
            Engine::build(&sc.stack, &quotas, AdaptorSet::new(), &settings, &running).unwrap();
        let mut open = Engine::build(
            &sc.stack,
            &quotas,
            AdaptorSet::transparent(&sc.stack),
            &settings,
            &running,
        )
        .unwrap();
        plain.run_until(settings.end());
        open.run_until(settings.end());
        assert_eq!(
            plain.finish().to_text(),
            open.finish().to_text(),
            "{}",
            path.display()
        );
    }
}
