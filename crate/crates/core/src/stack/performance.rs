//! Per-app performance targets: which metric each app is judged by, its
//! target value, its class and the cap used by the min operator.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::model::AppClass;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "metric", content = "topic", rename_all = "snake_case")]
pub enum MetricKind {
    /// Messages per second published on the topic by the app's nodes.
    PublishFrequencyHz(String),
    /// Mean delay from publication of a message on the topic to the end of
    /// the app's callback that consumed it.
    EndToEndLatencySeconds(String),
}

impl MetricKind {
    pub fn topic(&self) -> &str {
        match self {
            MetricKind::PublishFrequencyHz(t) | MetricKind::EndToEndLatencySeconds(t) => t,
        }
    }

    pub fn higher_is_better(&self) -> bool {
        matches!(self, MetricKind::PublishFrequencyHz(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            MetricKind::PublishFrequencyHz(_) => "publish_frequency_hz",
            MetricKind::EndToEndLatencySeconds(_) => "end_to_end_latency_s",
        }
    }

    /// Whether `value` meets `target` in the metric's direction.
    pub fn meets(&self, value: f64, target: f64) -> bool {
        if value.is_nan() {
            return false;
        }
        if self.higher_is_better() {
            value >= target
        } else {
            value <= target
        }
    }
}

/// Upper bound applied by the min operator. `Unbounded` stands for an
/// infinite cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cap {
    Finite(f64),
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppTarget {
    pub app: String,
    pub class: AppClass,
    pub metric: MetricKind,
    pub target: f64,
    pub cap: Cap,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerformanceSpec {
    pub apps: Vec<AppTarget>,
}

impl PerformanceSpec {
    pub fn get(&self, app: &str) -> Option<&AppTarget> {
        self.apps.iter().find(|a| a.app == app)
    }

    pub fn core(&self) -> impl Iterator<Item = &AppTarget> {
        self.apps.iter().filter(|a| a.class == AppClass::Core)
    }

    pub fn non_core(&self) -> impl Iterator<Item = &AppTarget> {
        self.apps.iter().filter(|a| a.class == AppClass::NonCore)
    }

    /// Entries whose app is in `running`.
    pub fn restricted_to(&self, running: &BTreeSet<String>) -> PerformanceSpec {
        PerformanceSpec {
            apps: self
                .apps
                .iter()
                .filter(|a| running.contains(&a.app))
                .cloned()
                .collect(),
        }
    }
}
