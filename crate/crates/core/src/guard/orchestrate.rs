//! Deployment loop over a timeline scenario: apply, monitor, warn, remediate,
//! relearn and store.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use super::{
    check_constraints, lookup_library, on_process_spawn, poll_registry, remediate, Action,
    ConfigLibrary, Context, FlagSource, GuardPolicy, LibraryError, MonitorState,
};
use crate::adaptor::AdaptorSet;
use crate::config::{Config, Provenance};
use crate::profiler::{compute_metrics_range, satisfied_windows, ProfileError};
use crate::sim::{micros_to_secs, secs_to_micros, Engine, Micros, SimError};
use crate::stack::{build_config_space, Scenario, TimelineAction};
use crate::tuner::{derive_seed, optimize, TunerError, TunerOptions, TunerOutcome, TuningProblem};

#[derive(Debug, Error)]
pub enum GuardError {
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Tuner(#[from] TunerError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error("unknown environment {0}")]
    UnknownEnvironment(String),
}

#[derive(Debug, Clone)]
pub struct GuardOptions {
    pub policy: GuardPolicy,
    pub seed: u64,
    /// Tuner budget per learning run; None uses the scenario's.
    pub budget: Option<usize>,
    /// Worker threads for tuner trials; 0 uses every core.
    pub parallel: usize,
}

impl GuardOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            policy: GuardPolicy::default(),
            seed,
            budget: None,
            parallel: 0,
        }
    }
}

/// One transition of the deployment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub time: f64,
    pub event: String,
    pub source: String,
    pub action: String,
    pub config_provenance: Option<Provenance>,
}

/// Verdict for one monitoring window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowRecord {
    pub start: f64,
    pub satisfied: bool,
    pub accumulator: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeploymentReport {
    pub rows: Vec<ReportRow>,
    pub windows: Vec<WindowRecord>,
    /// Times of every registry poll.
    pub polls: Vec<f64>,
}

impl DeploymentReport {
    pub fn first(&self, event: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.event == event)
    }

    pub fn rows_of<'a>(&'a self, event: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.event == event)
    }

    /// Percentage of satisfied windows starting in `[from, to)`.
    pub fn satisfaction(&self, from: f64, to: f64) -> f64 {
        let ws: Vec<&WindowRecord> = self
            .windows
            .iter()
            .filter(|w| w.start >= from && w.start < to)
            .collect();
        if ws.is_empty() {
            return 0.0;
        }
        100.0 * ws.iter().filter(|w| w.satisfied).count() as f64 / ws.len() as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "event", "source", "action", "config_provenance"])?;
        for r in &self.rows {
            w.write_record([
                format!("{:.3}", r.time),
                r.event.clone(),
                r.source.clone(),
                r.action.clone(),
                r.config_provenance
                    .map(|p| p.to_string())
                    .unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_windows_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.windows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Relearn {
    done_at: Micros,
    context: Context,
    outcome: TunerOutcome,
}

struct Deployment<'a> {
    scenario: &'a Scenario,
    options: &'a GuardOptions,
    library: &'a mut ConfigLibrary,
    engine: Engine,
    state: MonitorState,
    report: DeploymentReport,
    context: Context,
    spawned_at: BTreeMap<String, Micros>,
    learn_runs: u64,
    relearn: Option<Relearn>,
    terminal: bool,
    warned: usize,
}

impl Deployment<'_> {
    fn now(&self) -> f64 {
        micros_to_secs(self.engine.now())
    }

    fn row(&mut self, event: &str, source: &str, action: &str, provenance: Option<Provenance>) {
        let time = self.now();
        self.report.rows.push(ReportRow {
            time,
            event: event.to_string(),
            source: source.to_string(),
            action: action.to_string(),
            config_provenance: provenance,
        });
    }

    /// Nodes running long enough to have registered.
    fn registered(&self) -> BTreeSet<String> {
        let now = self.engine.now();
        let delay = secs_to_micros(self.options.policy.registration_delay_secs);
        self.engine
            .running_nodes()
            .into_iter()
            .filter(|n| self.spawned_at.get(n).is_none_or(|&t| now >= t + delay))
            .collect()
    }

    fn context_of(&self, nodes: &BTreeSet<String>) -> Context {
        Context::of_nodes(
            &self.scenario.stack,
            nodes,
            &self.engine.environment().name,
            self.scenario.settings.budget_cores,
        )
    }

    /// Applies `config` and lifts quotas it does not mention.
    fn apply(&mut self, config: &Config, source: &str) -> Result<(), GuardError> {
        let stale: Vec<String> = self
            .engine
            .running_nodes()
            .into_iter()
            .filter(|n| !config.quotas.contains_key(n) && self.engine.quota(n).is_some())
            .collect();
        for n in stale {
            self.engine.set_quota(&n, None)?;
        }
        self.engine.apply_config(config)?;
        self.row("config_applied", source, "apply", Some(config.provenance));
        Ok(())
    }

    /// Tunes the registered nodes in the current environment.
    fn learn(&mut self, context: &Context) -> Result<TunerOutcome, GuardError> {
        let nodes = self.registered();
        let stack = self.scenario.stack.subset(&nodes);
        let mut stack = stack;
        stack.env = self.engine.environment().clone();
        let apps: BTreeSet<String> = context.apps.iter().cloned().collect();
        let spec = self.scenario.spec.restricted_to(&apps);
        let space = build_config_space(&stack, self.scenario.settings.budget_cores);
        let problem = TuningProblem {
            stack: &stack,
            spec: &spec,
            space: &space,
            settings: self.scenario.settings.clone(),
            trial_secs: self.scenario.profiling.trial_secs,
            warmup_secs: self.scenario.profiling.warmup_secs,
        };
        let mut options = TunerOptions::new(
            self.budget(),
            derive_seed(self.options.seed, "learn", self.learn_runs),
        );
        options.parallel = self.options.parallel;
        self.learn_runs += 1;
        let run = optimize(&problem, &options, &mut |_| {})?;
        Ok(run.outcome)
    }

    fn budget(&self) -> usize {
        self.options
            .budget
            .unwrap_or(self.scenario.profiling.tune_budget)
    }

    fn store(&mut self, context: Context, outcome: &TunerOutcome) -> Result<(), GuardError> {
        if let TunerOutcome::Best { config, trial } = outcome {
            self.library.store(context, config.clone(), trial.clone())?;
        }
        Ok(())
    }

    fn start(&mut self) -> Result<(), GuardError> {
        let context = self.context.clone();
        if let Some(c) = lookup_library(self.library, &context).cloned() {
            return self.apply(&c.with_provenance(Provenance::Library), "library");
        }
        let outcome = self.learn(&context)?;
        self.store(context, &outcome)?;
        match outcome {
            TunerOutcome::Best { config, .. } => self.apply(&config, "tuner"),
            TunerOutcome::Unsat { .. } => {
                self.row("unsat", "tuner", "none", None);
                Ok(())
            }
        }
    }

    fn on_timeline(&mut self, action: &TimelineAction) -> Result<(), GuardError> {
        match action {
            TimelineAction::Spawn(n) => {
                self.engine.spawn(n)?;
                self.spawned_at.insert(n.clone(), self.engine.now());
                self.row("spawn", "timeline", "none", None);
                on_process_spawn(&mut self.state, self.engine.now());
                self.row("flag", "process_event", "none", None);
            }
            TimelineAction::Kill(n) => {
                self.engine.kill(n)?;
                self.spawned_at.remove(n);
                self.row("kill", "timeline", "none", None);
            }
            TimelineAction::Environment(name) => {
                let env = self
                    .scenario
                    .environment(name)
                    .ok_or_else(|| GuardError::UnknownEnvironment(name.clone()))?
                    .clone();
                self.engine.set_environment(env);
                self.row("environment", "timeline", "none", None);
            }
        }
        Ok(())
    }

    fn on_poll(&mut self) -> Result<(), GuardError> {
        let registered = self.registered();
        let diff = poll_registry(&mut self.state, &registered, self.engine.now());
        if diff.is_empty() {
            return Ok(());
        }
        self.row("flag", "registry_diff", "none", None);
        self.context = self.context_of(&registered);
        if let Some(c) = lookup_library(self.library, &self.context).cloned() {
            self.apply(&c.with_provenance(Provenance::Library), "library")?;
            self.state.settle();
            self.warned = 0;
        }
        Ok(())
    }

    fn on_window(&mut self, start: Micros, end: Micros) -> Result<(), GuardError> {
        let apps: BTreeSet<String> = self.context.apps.iter().cloned().collect();
        let spec = self.scenario.spec.restricted_to(&apps);
        let window = self.options.policy.window_secs;
        let series = compute_metrics_range(self.engine.trace(), &spec, start, end, window)?;
        let satisfied = satisfied_windows(&series, &spec)?
            .first()
            .copied()
            .unwrap_or(false);
        let action = check_constraints(satisfied, &mut self.state, &self.options.policy);
        self.report.windows.push(WindowRecord {
            start: micros_to_secs(start),
            satisfied,
            accumulator: self.state.accumulator,
        });
        match action {
            Action::Warn if self.warned < self.state.flags.len() => {
                self.warned = self.state.flags.len();
                let source = match self.state.flags.last().map(|f| f.source) {
                    Some(FlagSource::ProcessEvent) => "process_event",
                    _ => "registry_diff",
                };
                self.row("warning", source, "warn", None);
            }
            Action::TriggerRelearn if self.relearn.is_none() && !self.terminal => {
                self.row("violation", "constraint_monitor", "trigger_relearn", None);
                self.trigger_relearn()?;
            }
            _ => {}
        }
        Ok(())
    }

    fn trigger_relearn(&mut self) -> Result<(), GuardError> {
        let context = self.context.clone();
        if let Some(c) = lookup_library(self.library, &context).cloned() {
            self.apply(&c.with_provenance(Provenance::Library), "library")?;
            self.state.settle();
            return Ok(());
        }
        let nodes = self.registered();
        let current = self.current_config();
        let interim = remediate(
            &self.scenario.stack.subset(&nodes),
            &current,
            self.scenario.settings.budget_cores,
        );
        if interim.provenance == Provenance::Remediation {
            self.apply(&interim, "remediation")?;
        }
        let outcome = self.learn(&context)?;
        let live = self.budget() as f64 * self.scenario.profiling.trial_secs;
        self.relearn = Some(Relearn {
            done_at: self.engine.now() + secs_to_micros(live),
            context,
            outcome,
        });
        self.row("relearn_started", "tuner", "relearn", None);
        Ok(())
    }

    fn current_config(&self) -> Config {
        let mut c = Config::empty(Provenance::Tuned);
        for n in self.engine.running_nodes() {
            if let Some(q) = self.engine.quota(&n) {
                c.quotas.insert(n, q);
            }
        }
        for a in self.engine.adaptors().iter() {
            c.adaptors.insert(a.edge.clone(), a.rate);
        }
        c
    }

    fn finish_relearn(&mut self) -> Result<(), GuardError> {
        let Some(r) = self.relearn.take() else {
            return Ok(());
        };
        self.store(r.context.clone(), &r.outcome)?;
        match r.outcome {
            TunerOutcome::Best { config, .. } if r.context == self.context => {
                self.apply(&config, "tuner")?;
                self.state.settle();
                self.warned = 0;
            }
            TunerOutcome::Best { .. } => self.row("relearn_stale", "tuner", "none", None),
            TunerOutcome::Unsat { .. } => {
                self.terminal = true;
                self.row("unsat", "tuner", "none", Some(Provenance::Remediation));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Due {
    Timeline,
    Poll,
    Relearn,
    Window,
}

/// Runs the scenario's timeline under the guard. A scenario without a
/// timeline runs its plain duration with every node started.
pub fn orchestrate(
    scenario: &Scenario,
    options: &GuardOptions,
    library: &mut ConfigLibrary,
) -> Result<DeploymentReport, GuardError> {
    let (duration, stopped, mut events) = match &scenario.timeline {
        Some(t) => (t.duration, t.initially_stopped.clone(), t.events.clone()),
        None => (scenario.settings.duration, BTreeSet::new(), Vec::new()),
    };
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    let running: BTreeSet<String> = scenario
        .stack
        .nodes
        .iter()
        .map(|n| n.id.clone())
        .filter(|n| !stopped.contains(n))
        .collect();
    let settings = scenario
        .settings
        .with_duration(duration)
        .with_seed(options.seed);
    let engine = Engine::build(
        &scenario.stack,
        &BTreeMap::new(),
        AdaptorSet::new(),
        &settings,
        &running,
    )?;
    let state = MonitorState::new(running.clone(), 0);
    let mut d = Deployment {
        scenario,
        options,
        library,
        engine,
        state,
        report: DeploymentReport::default(),
        context: Context::default(),
        spawned_at: BTreeMap::new(),
        learn_runs: 0,
        relearn: None,
        terminal: false,
        warned: 0,
    };
    d.context = d.context_of(&running);
    d.start()?;

    let end = secs_to_micros(duration);
    let window = secs_to_micros(options.policy.window_secs);
    let interval = secs_to_micros(options.policy.poll_interval_secs);
    let delay = secs_to_micros(options.policy.registration_delay_secs);
    let mut next_event = 0;
    let mut next_poll = interval;
    let mut wakeups: Vec<Micros> = Vec::new();
    let mut window_start = 0;
    loop {
        let mut due: Vec<(Micros, Due)> =
            vec![(window_start + window, Due::Window), (next_poll, Due::Poll)];
        if let Some(e) = events.get(next_event) {
            due.push((secs_to_micros(e.time), Due::Timeline));
        }
        if let Some(&w) = wakeups.iter().min() {
            due.push((w, Due::Poll));
        }
        if let Some(r) = &d.relearn {
            due.push((r.done_at, Due::Relearn));
        }
        let (t, what) = due.into_iter().min().expect("window is always due");
        if t > end {
            break;
        }
        d.engine.run_until(t);
        match what {
            Due::Timeline => {
                let e = &events[next_event];
                next_event += 1;
                if let TimelineAction::Spawn(_) = e.action {
                    wakeups.push(t + delay);
                }
                d.on_timeline(&e.action)?;
            }
            Due::Poll => {
                wakeups.retain(|&w| w > t);
                if next_poll <= t {
                    next_poll += interval;
                }
                d.on_poll()?;
            }
            Due::Relearn => d.finish_relearn()?,
            Due::Window => {
                d.on_window(window_start, t)?;
                window_start = t;
            }
        }
    }
    d.report.polls = d.state.polls.iter().map(|&t| micros_to_secs(t)).collect();
    Ok(d.report)
}
