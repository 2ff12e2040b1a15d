use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::model::{AppClass, StackModel};
use super::performance::{Cap, PerformanceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ViolationCode {
    NoNodes,
    DuplicateNodeId,
    DuplicateTopicId,
    UnknownTopic,
    UnknownTrigger,
    ZeroWorkers,
    InvalidCost,
    InvalidRate,
    InvalidEnvironment,
    InconsistentAppClass,
    CyclicTriggerChain,
    UnknownApp,
    MissingCoreTarget,
    CapWorseThanTarget,
}

/// One broken invariant. `subject` names the offending field or id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub code: ViolationCode,
    pub subject: String,
    pub message: String,
}

impl Violation {
    fn new(code: ViolationCode, subject: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code,
            subject: subject.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.code, self.message)
    }
}

fn positive_finite(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

/// Checks every stack invariant. Empty result iff the stack is valid.
pub fn validate_stack(stack: &StackModel) -> Vec<Violation> {
    use ViolationCode::*;
    let mut out = Vec::new();

    if stack.nodes.is_empty() {
        out.push(Violation::new(NoNodes, "nodes", "stack has no nodes"));
    }

    let mut topics = BTreeSet::new();
    for t in &stack.topics {
        if !topics.insert(t.id.as_str()) {
            out.push(Violation::new(
                DuplicateTopicId,
                &t.id,
                format!("duplicate topic id {:?}", t.id),
            ));
        }
    }

    let env = &stack.env;
    if !positive_finite(env.cost_multiplier)
        || !positive_finite(env.rate_multiplier)
        || !(0.0..0.5).contains(&env.jitter_fraction)
    {
        out.push(Violation::new(
            InvalidEnvironment,
            &env.name,
            format!(
                "environment {:?} needs positive multipliers and jitter in [0, 0.5)",
                env.name
            ),
        ));
    }

    let mut ids = BTreeSet::new();
    let mut app_class: BTreeMap<&str, AppClass> = BTreeMap::new();
    for n in &stack.nodes {
        if !ids.insert(n.id.as_str()) {
            out.push(Violation::new(
                DuplicateNodeId,
                &n.id,
                format!("duplicate node id {:?}", n.id),
            ));
        }
        if n.workers == 0 {
            out.push(Violation::new(
                ZeroWorkers,
                &n.id,
                format!("node {:?} has worker_pool_size 0", n.id),
            ));
        }
        match app_class.get(n.app.as_str()) {
            Some(c) if *c != n.class => out.push(Violation::new(
                InconsistentAppClass,
                &n.app,
                format!("app {:?} has nodes of both classes", n.app),
            )),
            _ => {
                app_class.insert(&n.app, n.class);
            }
        }
        for p in &n.publications {
            if !topics.contains(p.topic.as_str()) {
                out.push(Violation::new(
                    UnknownTopic,
                    &p.topic,
                    format!("node {:?} publishes undeclared topic {:?}", n.id, p.topic),
                ));
            }
            if !positive_finite(p.cost) {
                out.push(Violation::new(
                    InvalidCost,
                    &n.id,
                    format!(
                        "publication {:?} of {:?} has non-positive cost",
                        p.topic, n.id
                    ),
                ));
            }
            if !positive_finite(p.rate_hz) {
                out.push(Violation::new(
                    InvalidRate,
                    &n.id,
                    format!(
                        "publication {:?} of {:?} has non-positive rate",
                        p.topic, n.id
                    ),
                ));
            }
        }
        for s in &n.subscriptions {
            if !topics.contains(s.topic.as_str()) {
                out.push(Violation::new(
                    UnknownTopic,
                    &s.topic,
                    format!(
                        "node {:?} subscribes to undeclared topic {:?}",
                        n.id, s.topic
                    ),
                ));
            }
            if !positive_finite(s.cost) {
                out.push(Violation::new(
                    InvalidCost,
                    &n.id,
                    format!(
                        "callback on {:?} of {:?} has non-positive cost",
                        s.topic, n.id
                    ),
                ));
            }
            if let Some(trig) = &s.triggers {
                if n.publication(trig).is_none() {
                    out.push(Violation::new(
                        UnknownTrigger,
                        trig,
                        format!(
                            "node {:?} triggers {:?} which it does not publish",
                            n.id, trig
                        ),
                    ));
                }
            }
        }
    }

    if let Some(topic) = find_trigger_cycle(stack) {
        out.push(Violation::new(
            CyclicTriggerChain,
            &topic,
            format!("triggered publications form a cycle through topic {topic:?}"),
        ));
    }

    out
}

/// Topic graph with an edge `in -> out` whenever a callback on `in`
/// triggers a publication on `out`. Returns a topic on a cycle, if any.
fn find_trigger_cycle(stack: &StackModel) -> Option<String> {
    let mut graph: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for n in &stack.nodes {
        for s in &n.subscriptions {
            if let Some(t) = &s.triggers {
                graph
                    .entry(s.topic.as_str())
                    .or_default()
                    .insert(t.as_str());
            }
        }
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    let mut marks: BTreeMap<&str, Mark> = BTreeMap::new();

    fn visit<'a>(
        v: &'a str,
        graph: &BTreeMap<&'a str, BTreeSet<&'a str>>,
        marks: &mut BTreeMap<&'a str, Mark>,
    ) -> Option<String> {
        match marks.get(v) {
            Some(Mark::Open) => return Some(v.to_string()),
            Some(Mark::Done) => return None,
            None => {}
        }
        marks.insert(v, Mark::Open);
        if let Some(next) = graph.get(v) {
            for w in next {
                if let Some(c) = visit(w, graph, marks) {
                    return Some(c);
                }
            }
        }
        marks.insert(v, Mark::Done);
        None
    }

    let roots: Vec<&str> = graph.keys().copied().collect();
    roots.into_iter().find_map(|r| visit(r, &graph, &mut marks))
}

/// Checks the performance targets against the stack they describe.
pub fn validate_spec(stack: &StackModel, spec: &PerformanceSpec) -> Vec<Violation> {
    use ViolationCode::*;
    let mut out = Vec::new();
    for a in &spec.apps {
        match stack.app_class(&a.app) {
            None => out.push(Violation::new(
                UnknownApp,
                &a.app,
                format!("performance target for unknown app {:?}", a.app),
            )),
            Some(c) if c != a.class => out.push(Violation::new(
                InconsistentAppClass,
                &a.app,
                format!(
                    "app {:?} is {c} in the stack but {} in its target",
                    a.app, a.class
                ),
            )),
            _ => {}
        }
        if !stack.topics.iter().any(|t| t.id == a.metric.topic()) {
            out.push(Violation::new(
                UnknownTopic,
                a.metric.topic(),
                format!(
                    "metric of {:?} names undeclared topic {:?}",
                    a.app,
                    a.metric.topic()
                ),
            ));
        }
        if !positive_finite(a.target) {
            out.push(Violation::new(
                MissingCoreTarget,
                &a.app,
                format!("app {:?} needs a finite positive target", a.app),
            ));
        }
        if let Cap::Finite(cap) = a.cap {
            if a.target.is_finite() && cap != a.target && a.metric.meets(a.target, cap) {
                out.push(Violation::new(
                    CapWorseThanTarget,
                    &a.app,
                    format!(
                        "cap {cap} of {:?} is worse than its target {}",
                        a.app, a.target
                    ),
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stack::model::{EnvironmentProfile, NodeSpec, Publication, Subscription, Topic};

    fn topic(id: &str) -> Topic {
        Topic {
            id: id.into(),
            kind: String::new(),
        }
    }

    fn relay(id: &str, input: &str, output: &str) -> NodeSpec {
        NodeSpec {
            id: id.into(),
            app: id.into(),
            class: AppClass::Core,
            workers: 1,
            publications: vec![Publication {
                topic: output.into(),
                rate_hz: 10.0,
                cost: 0.001,
            }],
            subscriptions: vec![Subscription {
                topic: input.into(),
                cost: 0.001,
                triggers: Some(output.into()),
            }],
        }
    }

    fn stack(nodes: Vec<NodeSpec>, topics: &[&str]) -> StackModel {
        StackModel {
            stack_id: "t".into(),
            nodes,
            topics: topics.iter().map(|t| topic(t)).collect(),
            env: EnvironmentProfile::default(),
        }
    }

    fn codes(v: &[Violation]) -> Vec<ViolationCode> {
        v.iter().map(|v| v.code).collect()
    }

    #[test]
    fn empty_stack() {
        let v = validate_stack(&stack(vec![], &[]));
        assert_eq!(codes(&v), vec![ViolationCode::NoNodes]);
        assert_eq!(v[0].message, "stack has no nodes");
    }

    #[test]
    fn duplicate_node() {
        let s = stack(
            vec![relay("a", "x", "y"), relay("a", "z", "w")],
            &["x", "y", "z", "w"],
        );
        assert_eq!(
            codes(&validate_stack(&s)),
            vec![ViolationCode::DuplicateNodeId]
        );
    }

    #[test]
    fn trigger_cycle() {
        let s = stack(
            vec![relay("a", "x", "y"), relay("b", "y", "x")],
            &["x", "y"],
        );
        assert_eq!(
            codes(&validate_stack(&s)),
            vec![ViolationCode::CyclicTriggerChain]
        );
        let ok = stack(
            vec![relay("a", "x", "y"), relay("b", "y", "z")],
            &["x", "y", "z"],
        );
        assert!(validate_stack(&ok).is_empty());
    }

    #[test]
    fn undeclared_topic_is_named() {
        let s = stack(vec![relay("a", "ghost", "y")], &["y"]);
        let v = validate_stack(&s);
        assert_eq!(codes(&v), vec![ViolationCode::UnknownTopic]);
        assert_eq!(v[0].subject, "ghost");
        assert!(v[0].message.contains("ghost"));
    }

    #[test]
    fn bad_costs_and_workers() {
        let mut n = relay("a", "x", "y");
        n.workers = 0;
        n.subscriptions[0].cost = f64::NAN;
        n.publications[0].cost = -1.0;
        let v = validate_stack(&stack(vec![n], &["x", "y"]));
        assert_eq!(
            codes(&v),
            vec![
                ViolationCode::ZeroWorkers,
                ViolationCode::InvalidCost,
                ViolationCode::InvalidCost
            ]
        );
    }
}
