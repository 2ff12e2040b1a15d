//! Runtime monitoring of a live deployment: process and registry watchers,
//! the constraint monitor, a context-keyed configuration library and the
//! remediation applied while a new configuration is learned.

mod orchestrate;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use orchestrate::{
    orchestrate, DeploymentReport, GuardError, GuardOptions, ReportRow, WindowRecord,
};

use crate::config::{Config, Provenance, RateLimit};
use crate::sim::Micros;
use crate::stack::{AppClass, StackModel};
use crate::tuner::TrialRecord;

pub const LIBRARY_VERSION: u32 = 1;

/// Operational context: which stack, which apps, where and on how much CPU.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub stack_id: String,
    /// Sorted, without duplicates.
    pub apps: Vec<String>,
    pub env: String,
    pub budget_cores: f64,
}

impl Context {
    pub fn new(
        stack_id: &str,
        apps: impl IntoIterator<Item = String>,
        env: &str,
        budget_cores: f64,
    ) -> Self {
        let apps: BTreeSet<String> = apps.into_iter().collect();
        Self {
            stack_id: stack_id.to_string(),
            apps: apps.into_iter().collect(),
            env: env.to_string(),
            budget_cores,
        }
    }

    /// Context of the given running nodes of `stack`.
    pub fn of_nodes(
        stack: &StackModel,
        nodes: &BTreeSet<String>,
        env: &str,
        budget_cores: f64,
    ) -> Self {
        let apps = stack
            .nodes
            .iter()
            .filter(|n| nodes.contains(&n.id))
            .map(|n| n.app.clone());
        Self::new(&stack.stack_id, apps, env, budget_cores)
    }

    /// Canonical library key.
    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}",
            self.stack_id,
            self.apps.join(","),
            self.env,
            self.budget_cores
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub context: Context,
    pub config: Config,
    pub trial: TrialRecord,
}

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("library I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("library format: {0}")]
    Format(#[from] serde_json::Error),
    #[error("library version {0} is not supported")]
    Version(u32),
    #[error("refusing to store an infeasible config for {0}")]
    Infeasible(String),
}

#[derive(Serialize, Deserialize)]
struct LibraryDocument {
    version: u32,
    entries: BTreeMap<String, LibraryEntry>,
}

/// Known-good configurations keyed by exact context.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigLibrary {
    entries: BTreeMap<String, LibraryEntry>,
}

impl ConfigLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &LibraryEntry> {
        self.entries.values()
    }

    pub fn lookup(&self, context: &Context) -> Option<&Config> {
        self.entries.get(&context.key()).map(|e| &e.config)
    }

    /// Stores `config` under `context`, replacing any earlier entry.
    pub fn store(
        &mut self,
        context: Context,
        config: Config,
        trial: TrialRecord,
    ) -> Result<(), LibraryError> {
        if !trial.feasible {
            return Err(LibraryError::Infeasible(context.key()));
        }
        self.entries.insert(
            context.key(),
            LibraryEntry {
                context,
                config,
                trial,
            },
        );
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = LibraryDocument {
            version: LIBRARY_VERSION,
            entries: self.entries.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("library serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LibraryError> {
        let doc: LibraryDocument = serde_json::from_str(text)?;
        if doc.version != LIBRARY_VERSION {
            return Err(LibraryError::Version(doc.version));
        }
        Ok(Self {
            entries: doc.entries,
        })
    }

    /// Loads a library file; a missing file is an empty library.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LibraryError> {
        match fs::read_to_string(path) {
            Ok(text) => Self::from_json(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::new()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LibraryError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagSource {
    ProcessEvent,
    RegistryDiff,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarningFlag {
    pub source: FlagSource,
    pub time: Micros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    None,
    Warn,
    TriggerRelearn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuardPolicy {
    /// Consecutive violated windows that trigger relearning.
    pub threshold: usize,
    pub poll_interval_secs: f64,
    /// Delay between a process starting and its node appearing in the
    /// registry.
    pub registration_delay_secs: f64,
    pub window_secs: f64,
}

impl Default for GuardPolicy {
    fn default() -> Self {
        Self {
            threshold: 5,
            poll_interval_secs: 30.0,
            registration_delay_secs: 0.5,
            window_secs: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegistryDiff {
    pub added: BTreeSet<String>,
    pub removed: BTreeSet<String>,
}

impl RegistryDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MonitorState {
    pub snapshot: BTreeSet<String>,
    pub snapshot_time: Micros,
    /// Times of every registry poll.
    pub polls: Vec<Micros>,
    pub accumulator: usize,
    pub flags: Vec<WarningFlag>,
}

impl MonitorState {
    pub fn new(registered: BTreeSet<String>, now: Micros) -> Self {
        Self {
            snapshot: registered,
            snapshot_time: now,
            polls: vec![now],
            accumulator: 0,
            flags: Vec::new(),
        }
    }

    /// Forgets warnings and violations once a config for the new context
    /// is in place.
    pub fn settle(&mut self) {
        self.flags.clear();
        self.accumulator = 0;
    }
}

/// Records a process start. The caller wakes the registry watcher once the
/// process has had time to register.
pub fn on_process_spawn(state: &mut MonitorState, now: Micros) {
    state.flags.push(WarningFlag {
        source: FlagSource::ProcessEvent,
        time: now,
    });
}

/// Compares the registry with the last snapshot and takes a new one.
pub fn poll_registry(
    state: &mut MonitorState,
    registered: &BTreeSet<String>,
    now: Micros,
) -> RegistryDiff {
    let diff = RegistryDiff {
        added: registered.difference(&state.snapshot).cloned().collect(),
        removed: state.snapshot.difference(registered).cloned().collect(),
    };
    state.snapshot = registered.clone();
    state.snapshot_time = now;
    state.polls.push(now);
    if !diff.is_empty() {
        state.flags.push(WarningFlag {
            source: FlagSource::RegistryDiff,
            time: now,
        });
    }
    diff
}

/// Feeds one window's verdict to the violation accumulator.
pub fn check_constraints(
    satisfied: bool,
    state: &mut MonitorState,
    policy: &GuardPolicy,
) -> Action {
    if satisfied {
        state.accumulator = 0;
    } else {
        state.accumulator += 1;
    }
    if state.accumulator >= policy.threshold {
        Action::TriggerRelearn
    } else if !state.flags.is_empty() && satisfied {
        Action::Warn
    } else {
        Action::None
    }
}

pub fn lookup_library<'a>(library: &'a ConfigLibrary, context: &Context) -> Option<&'a Config> {
    library.lookup(context)
}

/// Suspends every non-core node, closes adaptors on edges touching one and
/// hands the freed quota to core nodes in proportion to their quotas, up to
/// `budget_cores` each. Nodes without a quota count as holding the budget.
pub fn remediate(stack: &StackModel, current: &Config, budget_cores: f64) -> Config {
    let class_of: BTreeMap<&str, AppClass> = stack
        .nodes
        .iter()
        .map(|n| (n.id.as_str(), n.class))
        .collect();
    let is = |node: &str, class: AppClass| class_of.get(node) == Some(&class);
    if !stack.nodes.iter().any(|n| n.class == AppClass::NonCore) {
        return current.clone();
    }

    let mut out = current.clone().with_provenance(Provenance::Remediation);
    let mut freed = 0.0;
    for n in stack.nodes.iter().filter(|n| n.class == AppClass::NonCore) {
        freed += out.quotas.get(&n.id).copied().unwrap_or(budget_cores);
        out.quotas.insert(n.id.clone(), 0.0);
    }
    let core_total: f64 = out
        .quotas
        .iter()
        .filter(|(n, _)| is(n, AppClass::Core))
        .map(|(_, q)| q)
        .sum();
    if freed > 0.0 && core_total > 0.0 {
        let scale = 1.0 + freed / core_total;
        for (n, q) in out.quotas.iter_mut() {
            if is(n, AppClass::Core) {
                *q = (*q * scale).min(budget_cores).max(*q);
            }
        }
    }
    for (edge, rate) in out.adaptors.iter_mut() {
        let from_non_core = stack
            .publishers(&edge.topic)
            .any(|p| p.class == AppClass::NonCore);
        if is(&edge.subscriber, AppClass::NonCore) || from_non_core {
            *rate = RateLimit::Hz(0.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::secs_to_micros;
    use crate::stack::parse_scenario;

    fn policy() -> GuardPolicy {
        GuardPolicy::default()
    }

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn threshold_triggers_relearn() {
        let mut s = MonitorState::default();
        let actions: Vec<Action> = (0..5)
            .map(|_| check_constraints(false, &mut s, &policy()))
            .collect();
        assert_eq!(actions[..4], [Action::None; 4]);
        assert_eq!(actions[4], Action::TriggerRelearn);
    }

    #[test]
    fn satisfied_window_resets_accumulator() {
        let mut s = MonitorState::default();
        let pattern = [false, false, false, false, true, false, false, false, false];
        for ok in pattern {
            assert_eq!(check_constraints(ok, &mut s, &policy()), Action::None);
        }
        assert_eq!(s.accumulator, 4);
    }

    #[test]
    fn flags_without_violations_warn() {
        let mut s = MonitorState::default();
        on_process_spawn(&mut s, 5);
        for _ in 0..10 {
            assert_eq!(check_constraints(true, &mut s, &policy()), Action::Warn);
        }
    }

    #[test]
    fn registry_diffs() {
        let mut s = MonitorState::new(set(&["a", "b"]), 0);
        let d = poll_registry(&mut s, &set(&["a", "b"]), secs_to_micros(30.0));
        assert!(d.is_empty());
        assert!(s.flags.is_empty());
        let d = poll_registry(&mut s, &set(&["a", "c"]), secs_to_micros(60.0));
        assert_eq!(d.added, set(&["c"]));
        assert_eq!(d.removed, set(&["b"]));
        assert_eq!(s.flags[0].source, FlagSource::RegistryDiff);
        assert_eq!(s.polls, vec![0, secs_to_micros(30.0), secs_to_micros(60.0)]);
    }

    #[test]
    fn spawn_of_registered_node_flags_without_diff() {
        let mut s = MonitorState::new(set(&["a"]), 0);
        on_process_spawn(&mut s, 10);
        let d = poll_registry(&mut s, &set(&["a"]), 11);
        assert!(d.is_empty());
        assert_eq!(s.flags.len(), 1);
        assert_eq!(s.flags[0].source, FlagSource::ProcessEvent);
    }

    fn trial(feasible: bool) -> TrialRecord {
        TrialRecord {
            iteration: 0,
            config: Config::empty(Provenance::Tuned),
            values: BTreeMap::new(),
            satisfaction_rate: if feasible { 100.0 } else { 0.0 },
            feasible,
            objective: 0.5,
            core_tail: BTreeMap::new(),
            seed: 1,
            wall_ms: 0.0,
        }
    }

    #[test]
    fn library_round_trips_through_disk() {
        let ctx = Context::new("s", ["nav".to_string(), "base".to_string()], "indoor", 1.5);
        assert_eq!(ctx.apps, vec!["base", "nav"]);
        let mut cfg = Config::empty(Provenance::Tuned);
        cfg.quotas.insert("n".into(), 0.35);
        let mut lib = ConfigLibrary::new();
        assert!(lookup_library(&lib, &ctx).is_none());
        lib.store(ctx.clone(), cfg.clone(), trial(true)).unwrap();
        assert!(lib.store(ctx.clone(), cfg.clone(), trial(false)).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("library.json");
        lib.save(&path).unwrap();
        let back = ConfigLibrary::load(&path).unwrap();
        assert_eq!(back.lookup(&ctx), Some(&cfg));
        let other = Context::new("s", ["nav".to_string()], "indoor", 1.5);
        assert!(back.lookup(&other).is_none());
        assert!(ConfigLibrary::load(dir.path().join("missing.json"))
            .unwrap()
            .is_empty());
        let wrong = lib.to_json().replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(
            ConfigLibrary::from_json(&wrong),
            Err(LibraryError::Version(9))
        ));
    }

    const STACK: &str = r#"
[stack]
id = "r"
[env]
name = "lab"
cost_multiplier = 1.0
rate_multiplier = 1.0
jitter_fraction = 0.0
[sim]
duration = 1.0
seed = 1
budget_cores = 2.0
[[topics]]
id = "image"
kind = "img"
[[nodes]]
id = "cam"
app = "base"
class = "core"
workers = 1
publications = [{ topic = "image", rate_hz = 30.0, cost = 0.002 }]
[[nodes]]
id = "nav"
app = "nav"
class = "core"
workers = 1
subscriptions = [{ topic = "image", cost = 0.001 }]
[[nodes]]
id = "obj"
app = "obj"
class = "non_core"
workers = 4
subscriptions = [{ topic = "image", cost = 0.1 }]
"#;

    #[test]
    fn remediation_moves_non_core_share_to_core() {
        let s = parse_scenario(STACK).unwrap();
        let mut c = Config::empty(Provenance::Tuned);
        c.quotas.insert("cam".into(), 0.2);
        c.quotas.insert("nav".into(), 0.6);
        c.quotas.insert("obj".into(), 0.8);
        c.adaptors.insert(
            crate::stack::EdgeId::new("image", "obj"),
            RateLimit::Hz(2.0),
        );
        let r = remediate(&s.stack, &c, 2.0);
        assert_eq!(r.provenance, Provenance::Remediation);
        assert_eq!(r.quotas["obj"], 0.0);
        assert!((r.quotas["cam"] - (0.2 + 0.8 * 0.2 / 0.8)).abs() < 1e-12);
        assert!((r.quotas["nav"] - (0.6 + 0.8 * 0.6 / 0.8)).abs() < 1e-12);
        assert_eq!(
            r.adaptors[&crate::stack::EdgeId::new("image", "obj")],
            RateLimit::Hz(0.0)
        );
        for n in ["cam", "nav"] {
            assert!(r.quotas[n] >= c.quotas[n]);
        }
    }

    #[test]
    fn remediation_without_non_core_is_identity() {
        let mut s = parse_scenario(STACK).unwrap();
        s.stack.nodes.retain(|n| n.id != "obj");
        let mut c = Config::empty(Provenance::Tuned);
        c.quotas.insert("nav".into(), 0.6);
        assert_eq!(remediate(&s.stack, &c, 2.0), c);
    }
}
