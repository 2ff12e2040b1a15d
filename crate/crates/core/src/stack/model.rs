//! Declarative stack description: nodes, topics, worker pools and the
//! environment profile that scales their costs and sensor rates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Whether an application is a hard constraint or an optimization objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppClass {
    Core,
    NonCore,
}

impl fmt::Display for AppClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppClass::Core => f.write_str("core"),
            AppClass::NonCore => f.write_str("non_core"),
        }
    }
}

/// A topic a node publishes to.
///
/// Publications named by one of the node's `triggers` fire when that
/// callback completes; every other publication runs on a timer at
/// `rate_hz` (scaled by the environment's rate multiplier).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Publication {
    pub topic: String,
    pub rate_hz: f64,
    /// CPU-seconds spent producing one message.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subscription {
    pub topic: String,
    /// CPU-seconds per delivered message.
    pub cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triggers: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub app: String,
    pub class: AppClass,
    /// Worker threads shared by every callback of the node.
    pub workers: usize,
    #[serde(default)]
    pub publications: Vec<Publication>,
    #[serde(default)]
    pub subscriptions: Vec<Subscription>,
}

impl NodeSpec {
    /// True when no subscription of this node triggers `topic`.
    pub fn is_timer_driven(&self, topic: &str) -> bool {
        !self
            .subscriptions
            .iter()
            .any(|s| s.triggers.as_deref() == Some(topic))
    }

    pub fn publication(&self, topic: &str) -> Option<&Publication> {
        self.publications.iter().find(|p| p.topic == topic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub id: String,
    #[serde(default)]
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentProfile {
    pub name: String,
    #[serde(default = "one")]
    pub cost_multiplier: f64,
    #[serde(default = "one")]
    pub rate_multiplier: f64,
    #[serde(default)]
    pub jitter_fraction: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for EnvironmentProfile {
    fn default() -> Self {
        Self {
            name: "default".into(),
            cost_multiplier: 1.0,
            rate_multiplier: 1.0,
            jitter_fraction: 0.0,
        }
    }
}

/// A subscription edge: messages on `topic` delivered to `subscriber`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeId {
    pub topic: String,
    pub subscriber: String,
}

impl EdgeId {
    pub fn new(topic: impl Into<String>, subscriber: impl Into<String>) -> Self {
        Self {
            topic: topic.into(),
            subscriber: subscriber.into(),
        }
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.topic, self.subscriber)
    }
}

impl std::str::FromStr for EdgeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once("->") {
            Some((t, n)) if !t.is_empty() && !n.is_empty() => Ok(EdgeId::new(t, n)),
            _ => Err(format!("malformed edge id {s:?}, expected topic->node")),
        }
    }
}

impl Serialize for EdgeId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EdgeId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackModel {
    pub stack_id: String,
    pub nodes: Vec<NodeSpec>,
    pub topics: Vec<Topic>,
    pub env: EnvironmentProfile,
}

impl StackModel {
    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn app_class(&self, app: &str) -> Option<AppClass> {
        self.nodes.iter().find(|n| n.app == app).map(|n| n.class)
    }

    pub fn apps(&self) -> BTreeSet<String> {
        self.nodes.iter().map(|n| n.app.clone()).collect()
    }

    pub fn node_apps(&self) -> BTreeMap<String, String> {
        self.nodes
            .iter()
            .map(|n| (n.id.clone(), n.app.clone()))
            .collect()
    }

    /// All subscription edges in node order, then subscription order.
    pub fn edges(&self) -> Vec<EdgeId> {
        self.nodes
            .iter()
            .flat_map(|n| n.subscriptions.iter().map(|s| EdgeId::new(&s.topic, &n.id)))
            .collect()
    }

    pub fn has_edge(&self, edge: &EdgeId) -> bool {
        self.node(&edge.subscriber)
            .map(|n| n.subscriptions.iter().any(|s| s.topic == edge.topic))
            .unwrap_or(false)
    }

    pub fn publishers<'a>(&'a self, topic: &'a str) -> impl Iterator<Item = &'a NodeSpec> + 'a {
        self.nodes
            .iter()
            .filter(move |n| n.publications.iter().any(|p| p.topic == topic))
    }

    /// Nominal message rate arriving on `topic`, summed over publishers and
    /// scaled by the environment's rate multiplier.
    pub fn topic_rate(&self, topic: &str) -> f64 {
        self.publishers(topic)
            .filter_map(|n| n.publication(topic))
            .map(|p| p.rate_hz)
            .sum::<f64>()
            * self.env.rate_multiplier
    }

    /// Copy of the stack restricted to the given node ids. Topics are kept.
    pub fn subset(&self, active: &BTreeSet<String>) -> StackModel {
        StackModel {
            stack_id: self.stack_id.clone(),
            nodes: self
                .nodes
                .iter()
                .filter(|n| active.contains(&n.id))
                .cloned()
                .collect(),
            topics: self.topics.clone(),
            env: self.env.clone(),
        }
    }
}
