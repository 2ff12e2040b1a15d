//! Random stacks and engine invariant checks shared by the test targets.

use std::collections::BTreeMap;

use proptest::prelude::*;
use robotune::config::{Config, Provenance, RateLimit};
use robotune::sim::{
    run_simulation, DropReason, Engine, EventKind, EventTrace, SimulationSettings, MICROS_PER_SEC,
};
use robotune::stack::{
    AppClass, EdgeId, EnvironmentProfile, NodeSpec, Publication, StackModel, Subscription, Topic,
};

#[derive(Debug, Clone)]
pub struct Case {
    pub stack: StackModel,
    pub config: Config,
    pub settings: SimulationSettings,
}

fn sensor() -> impl Strategy<Value = (f64, f64)> {
    (1.0..120.0f64, 0.0002..0.03f64)
}

fn consumer() -> impl Strategy<Value = (usize, f64, usize, bool)> {
    (0usize..3, 0.0005..0.25f64, 1usize..8, any::<bool>())
}

fn quota() -> impl Strategy<Value = Option<f64>> {
    prop_oneof![
        3 => Just(None),
        6 => (0.05..2.5f64).prop_map(Some),
        1 => Just(Some(0.0)),
    ]
}

fn rate() -> impl Strategy<Value = Option<RateLimit>> {
    prop_oneof![
        2 => Just(None),
        1 => Just(Some(RateLimit::Unlimited)),
        4 => (0.5..60.0f64).prop_map(|h| Some(RateLimit::Hz(h))),
        1 => Just(Some(RateLimit::Hz(0.0))),
    ]
}

pub fn case() -> impl Strategy<Value = Case> {
    (
        prop::collection::vec(sensor(), 1..4),
        prop::collection::vec(consumer(), 0..4),
        prop::collection::vec(quota(), 8),
        prop::collection::vec(rate(), 8),
        0.5..4.0f64,
        0.0..0.3f64,
        0.0..0.1f64,
        any::<u64>(),
    )
        .prop_map(
            |(sensors, consumers, quotas, rates, budget, jitter, overhead, seed)| {
                let mut nodes = Vec::new();
                let mut topics = Vec::new();
                for (i, (hz, cost)) in sensors.iter().enumerate() {
                    topics.push(Topic {
                        id: format!("s{i}"),
                        kind: String::new(),
                    });
                    nodes.push(NodeSpec {
                        id: format!("sensor{i}"),
                        app: "base".into(),
                        class: AppClass::Core,
                        workers: 1,
                        publications: vec![Publication {
                            topic: format!("s{i}"),
                            rate_hz: *hz,
                            cost: *cost,
                        }],
                        subscriptions: vec![],
                    });
                }
                for (i, (src, cost, workers, emits)) in consumers.iter().enumerate() {
                    let topic = format!("s{}", src % sensors.len());
                    let out = format!("c{i}");
                    topics.push(Topic {
                        id: out.clone(),
                        kind: String::new(),
                    });
                    nodes.push(NodeSpec {
                        id: format!("consumer{i}"),
                        app: format!("app{}", i % 2),
                        class: if i % 2 == 0 {
                            AppClass::Core
                        } else {
                            AppClass::NonCore
                        },
                        workers: *workers,
                        publications: vec![Publication {
                            topic: out.clone(),
                            rate_hz: 10.0,
                            cost: 0.0005,
                        }],
                        subscriptions: vec![Subscription {
                            topic,
                            cost: *cost,
                            triggers: emits.then_some(out),
                        }],
                    });
                }
                let mut config = Config::empty(Provenance::Random);
                for (n, q) in nodes.iter().zip(&quotas) {
                    if let Some(q) = q {
                        config.quotas.insert(n.id.clone(), *q);
                    }
                }
                let stack = StackModel {
                    stack_id: "prop".into(),
                    nodes,
                    topics,
                    env: EnvironmentProfile {
                        jitter_fraction: jitter,
                        ..EnvironmentProfile::default()
                    },
                };
                for (e, r) in stack.edges().into_iter().zip(&rates) {
                    if let Some(r) = r {
                        config.adaptors.insert(e, *r);
                    }
                }
                let settings = SimulationSettings {
                    duration: 2.0,
                    budget_cores: budget,
                    seed,
                    switch_overhead: overhead,
                    ..SimulationSettings::default()
                };
                Case {
                    stack,
                    config,
                    settings,
                }
            },
        )
}

const EPS: f64 = 1e-9;

/// Steps the engine one quantum at a time and checks CPU accounting.
pub fn check_cpu(case: &Case) -> Result<EventTrace, TestCaseError> {
    let mut engine = Engine::new(&case.stack, &case.config, &case.settings).unwrap();
    let q = case.settings.quantum();
    let q_secs = q as f64 / MICROS_PER_SEC;
    let period = case.settings.period();
    let period_secs = period as f64 / MICROS_PER_SEC;
    let mut used = vec![0.0; case.stack.nodes.len()];
    let mut period_index = 0;
    while engine.now() < case.settings.end() {
        let t0 = engine.now();
        if t0 / period != period_index {
            period_index = t0 / period;
            used.iter_mut().for_each(|u| *u = 0.0);
        }
        engine.run_until(t0 + q);
        let grants = engine.last_grants();
        let total: f64 = grants.iter().sum();
        prop_assert!(
            total <= case.settings.budget_cores * q_secs + EPS,
            "capacity exceeded: {total}"
        );
        for (i, n) in case.stack.nodes.iter().enumerate() {
            prop_assert!(grants[i] >= 0.0);
            used[i] += grants[i];
            if let Some(&limit) = case.config.quotas.get(&n.id) {
                prop_assert!(
                    used[i] <= limit * period_secs + EPS,
                    "{} used {} of quota {} in a period",
                    n.id,
                    used[i],
                    limit * period_secs
                );
            }
        }
    }
    Ok(engine.finish())
}

pub fn check_pools(case: &Case, trace: &EventTrace) -> Result<(), TestCaseError> {
    let workers: BTreeMap<&str, usize> = case
        .stack
        .nodes
        .iter()
        .map(|n| (n.id.as_str(), n.workers))
        .collect();
    let suspended: Vec<&str> = case
        .config
        .quotas
        .iter()
        .filter(|(_, q)| **q <= 0.0)
        .map(|(n, _)| n.as_str())
        .collect();
    for e in &trace.events {
        match &e.kind {
            EventKind::ActiveThreadSample { node, count } => {
                prop_assert!(
                    *count as usize <= workers[&**node],
                    "{node} has {count} threads"
                );
            }
            EventKind::CallbackStarted { node, .. } | EventKind::MessagePublished { node, .. } => {
                prop_assert!(!suspended.contains(&&**node), "suspended {node} ran");
            }
            _ => {}
        }
    }
    Ok(())
}

/// Arrival times of messages that passed the adaptor on `edge`.
fn passed_arrivals(trace: &EventTrace, edge: &EdgeId) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::new();
    for e in &trace.events {
        match &e.kind {
            EventKind::MessagePublished { topic, .. } if **topic == *edge.topic => out.push(e.time),
            EventKind::MessageDropped {
                topic,
                subscriber,
                reason,
            } if **topic == *edge.topic
                && **subscriber == *edge.subscriber
                && (*reason == DropReason::RateLimited || *reason == DropReason::Suspended) =>
            {
                out.pop();
            }
            _ => {}
        }
    }
    out
}

pub fn check_adaptors(case: &Case, trace: &EventTrace) -> Result<(), TestCaseError> {
    for (edge, rate) in &case.config.adaptors {
        let RateLimit::Hz(hz) = *rate else { continue };
        let passed = passed_arrivals(trace, edge);
        if hz <= 0.0 {
            prop_assert!(
                passed.is_empty(),
                "closed edge {edge} passed {} messages",
                passed.len()
            );
            continue;
        }
        let min_gap = MICROS_PER_SEC / hz;
        for w in passed.windows(2) {
            prop_assert!(
                (w[1] - w[0]) as f64 >= min_gap - 1e-6,
                "{edge}: gap {} < {min_gap}",
                w[1] - w[0]
            );
        }
    }
    Ok(())
}

/// Every engine invariant for one case, including byte-identical reruns.
pub fn check_case(case: &Case) -> Result<(), TestCaseError> {
    let trace = check_cpu(case)?;
    check_pools(case, &trace)?;
    check_adaptors(case, &trace)?;
    let again = run_simulation(&case.stack, &case.config, &case.settings).unwrap();
    prop_assert_eq!(trace.to_text(), again.to_text());
    Ok(())
}

/// Unlimited adaptors on every edge leave the trace unchanged.
pub fn check_transparency(case: &Case) -> Result<(), TestCaseError> {
    let mut bare = case.config.clone();
    bare.adaptors.clear();
    let mut open = bare.clone();
    for e in case.stack.edges() {
        open.adaptors.insert(e, RateLimit::Unlimited);
    }
    let a = run_simulation(&case.stack, &bare, &case.settings).unwrap();
    let b = run_simulation(&case.stack, &open, &case.settings).unwrap();
    prop_assert_eq!(a.to_text(), b.to_text());
    Ok(())
}
