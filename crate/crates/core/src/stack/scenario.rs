//! Scenario files.
//!
//! A scenario is a TOML document with the sections `stack`, `env`, `sim`,
//! `topics`, `nodes` and `spec`. Optional `envs` lists alternate
//! environment profiles and `timeline` declares timed deployment events.
//!
//! ```toml
//! [stack]
//! id = "basic_nav_web"
//!
//! [env]
//! name = "indoor"
//! cost_multiplier = 1.0
//! rate_multiplier = 1.0
//! jitter_fraction = 0.05
//!
//! [sim]
//! duration = 5.0
//! seed = 42
//! budget_cores = 1.0
//!
//! [[topics]]
//! id = "scan"
//!
//! [[nodes]]
//! id = "lidar_driver"
//! app = "lidar"
//! class = "core"
//! workers = 1
//! publications = [{ topic = "scan", rate_hz = 40.0, cost = 0.001 }]
//!
//! [[spec]]
//! app = "nav"
//! class = "core"
//! metric = "publish_frequency_hz"
//! topic = "cmd_vel"
//! target = 35.0
//! ```
//!
//! Rates are in Hz, costs in CPU-seconds per message and budgets in cores.
//! A `spec` entry without `cap` is unbounded.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::{AppClass, EnvironmentProfile, NodeSpec, StackModel, Topic};
use super::performance::{AppTarget, Cap, MetricKind, PerformanceSpec};
use super::validate::{validate_spec, validate_stack, Violation};
use crate::sim::SimulationSettings;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),
}

impl ScenarioError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ScenarioError::Validation(v) => v,
            _ => &[],
        }
    }
}

/// Timed deployment change.
#[derive(Debug, Clone, PartialEq)]
pub enum TimelineAction {
    Spawn(String),
    Kill(String),
    Environment(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimelineEvent {
    pub time: f64,
    pub action: TimelineAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub duration: f64,
    /// Nodes not running at time zero.
    pub initially_stopped: BTreeSet<String>,
    pub events: Vec<TimelineEvent>,
}

/// Everything a scenario file declares.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub stack: StackModel,
    pub spec: PerformanceSpec,
    pub settings: SimulationSettings,
    pub profiling: ProfilingSection,
    pub environments: Vec<EnvironmentProfile>,
    pub timeline: Option<Timeline>,
}

impl Scenario {
    pub fn environment(&self, name: &str) -> Option<&EnvironmentProfile> {
        std::iter::once(&self.stack.env)
            .chain(self.environments.iter())
            .find(|e| e.name == name)
    }
}

/// Tuning and evaluation parameters that travel with a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilingSection {
    /// Seconds simulated per tuner trial.
    #[serde(default = "default_trial_secs")]
    pub trial_secs: f64,
    /// Seconds simulated when evaluating a finished configuration.
    #[serde(default = "default_eval_secs")]
    pub eval_secs: f64,
    #[serde(default = "default_budget")]
    pub tune_budget: usize,
    /// Seconds simulated under a configuration before measurement starts.
    #[serde(default = "default_warmup_secs")]
    pub warmup_secs: f64,
}

fn default_warmup_secs() -> f64 {
    15.0
}

fn default_trial_secs() -> f64 {
    5.0
}

fn default_eval_secs() -> f64 {
    30.0
}

fn default_budget() -> usize {
    60
}

impl Default for ProfilingSection {
    fn default() -> Self {
        Self {
            trial_secs: default_trial_secs(),
            eval_secs: default_eval_secs(),
            tune_budget: default_budget(),
            warmup_secs: default_warmup_secs(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    stack: RawStack,
    env: EnvironmentProfile,
    sim: SimulationSettings,
    #[serde(default)]
    profiling: ProfilingSection,
    topics: Vec<Topic>,
    nodes: Vec<NodeSpec>,
    #[serde(default)]
    spec: Vec<RawTarget>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    envs: Vec<EnvironmentProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timeline: Option<RawTimeline>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawStack {
    id: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    app: String,
    class: AppClass,
    metric: String,
    topic: String,
    target: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cap: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTimeline {
    duration: f64,
    #[serde(default)]
    initially_stopped: Vec<String>,
    #[serde(default)]
    events: Vec<RawEvent>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spawn: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kill: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    env: Option<String>,
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let scenario = from_raw(raw)?;
    let mut violations = validate_stack(&scenario.stack);
    violations.extend(validate_spec(&scenario.stack, &scenario.spec));
    for env in &scenario.environments {
        let mut probe = scenario.stack.clone();
        probe.env = env.clone();
        probe.nodes.clear();
        violations.extend(
            validate_stack(&probe)
                .into_iter()
                .filter(|v| v.code == super::ViolationCode::InvalidEnvironment),
        );
    }
    if let Some(tl) = &scenario.timeline {
        violations.extend(validate_timeline(&scenario, tl));
    }
    if !violations.is_empty() {
        return Err(ScenarioError::Validation(violations));
    }
    Ok(scenario)
}

fn validate_timeline(scenario: &Scenario, tl: &Timeline) -> Vec<Violation> {
    let mut out = Vec::new();
    let unknown = |what: &str, id: &str| Violation {
        code: super::ViolationCode::UnknownApp,
        subject: id.to_string(),
        message: format!("timeline references unknown {what} {id:?}"),
    };
    for n in &tl.initially_stopped {
        if scenario.stack.node(n).is_none() {
            out.push(unknown("node", n));
        }
    }
    for e in &tl.events {
        match &e.action {
            TimelineAction::Spawn(n) | TimelineAction::Kill(n) => {
                if scenario.stack.node(n).is_none() {
                    out.push(unknown("node", n));
                }
            }
            TimelineAction::Environment(name) => {
                if scenario.environment(name).is_none() {
                    out.push(unknown("environment", name));
                }
            }
        }
    }
    out
}

fn from_raw(raw: RawScenario) -> Result<Scenario, ScenarioError> {
    raw.sim.validate().map_err(ScenarioError::Parse)?;
    let mut apps = Vec::with_capacity(raw.spec.len());
    for t in raw.spec {
        let metric = match t.metric.as_str() {
            "publish_frequency_hz" => MetricKind::PublishFrequencyHz(t.topic),
            "end_to_end_latency_s" => MetricKind::EndToEndLatencySeconds(t.topic),
            other => {
                return Err(ScenarioError::Parse(format!(
                    "unknown metric {other:?} for app {:?}",
                    t.app
                )))
            }
        };
        apps.push(AppTarget {
            app: t.app,
            class: t.class,
            metric,
            target: t.target,
            cap: t.cap.map_or(Cap::Unbounded, Cap::Finite),
        });
    }
    let timeline = match raw.timeline {
        None => None,
        Some(tl) => {
            let mut events = Vec::with_capacity(tl.events.len());
            for e in tl.events {
                let action = match (e.spawn, e.kill, e.env) {
                    (Some(n), None, None) => TimelineAction::Spawn(n),
                    (None, Some(n), None) => TimelineAction::Kill(n),
                    (None, None, Some(n)) => TimelineAction::Environment(n),
                    _ => {
                        return Err(ScenarioError::Parse(format!(
                            "timeline event at t={} needs exactly one of spawn, kill, env",
                            e.time
                        )))
                    }
                };
                events.push(TimelineEvent {
                    time: e.time,
                    action,
                });
            }
            events.sort_by(|a, b| a.time.total_cmp(&b.time));
            Some(Timeline {
                duration: tl.duration,
                initially_stopped: tl.initially_stopped.into_iter().collect(),
                events,
            })
        }
    };
    Ok(Scenario {
        stack: StackModel {
            stack_id: raw.stack.id,
            nodes: raw.nodes,
            topics: raw.topics,
            env: raw.env,
        },
        spec: PerformanceSpec { apps },
        settings: raw.sim,
        profiling: raw.profiling,
        environments: raw.envs,
        timeline,
    })
}

/// Writes a scenario back into the file format.
pub fn serialize_scenario(s: &Scenario) -> String {
    let raw = RawScenario {
        stack: RawStack {
            id: s.stack.stack_id.clone(),
        },
        env: s.stack.env.clone(),
        sim: s.settings.clone(),
        profiling: s.profiling.clone(),
        topics: s.stack.topics.clone(),
        nodes: s.stack.nodes.clone(),
        spec: s
            .spec
            .apps
            .iter()
            .map(|a| RawTarget {
                app: a.app.clone(),
                class: a.class,
                metric: a.metric.label().to_string(),
                topic: a.metric.topic().to_string(),
                target: a.target,
                cap: match a.cap {
                    Cap::Finite(c) => Some(c),
                    Cap::Unbounded => None,
                },
            })
            .collect(),
        envs: s.environments.clone(),
        timeline: s.timeline.as_ref().map(|tl| RawTimeline {
            duration: tl.duration,
            initially_stopped: tl.initially_stopped.iter().cloned().collect(),
            events: tl
                .events
                .iter()
                .map(|e| {
                    let mut r = RawEvent {
                        time: e.time,
                        spawn: None,
                        kill: None,
                        env: None,
                    };
                    match &e.action {
                        TimelineAction::Spawn(n) => r.spawn = Some(n.clone()),
                        TimelineAction::Kill(n) => r.kill = Some(n.clone()),
                        TimelineAction::Environment(n) => r.env = Some(n.clone()),
                    }
                    r
                })
                .collect(),
        }),
    };
    toml::to_string(&raw).expect("scenario serializes to TOML")
}
