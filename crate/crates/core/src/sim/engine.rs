//! Quantum-stepped discrete-event simulation of a stack.
//!
//! Time advances in fixed scheduler quanta. All events happen on quantum
//! boundaries: timers fire at the first boundary at or after their due
//! time, and a callback that completes during a quantum finishes (and
//! publishes) at the end of it. Within a boundary, events are ordered by
//! node order, then by the order in which they were produced.
//!
//! Timer publications coalesce: a timer that fires while its previous job
//! is still waiting for a worker is skipped. A node whose quota is zero is
//! suspended: its callbacks are discarded, its timers stay silent and
//! deliveries to it are dropped.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::cgroup::{enforce_quota, CgroupState};
use super::pool::{Dispatch, Job, JobSource, WorkerPoolState};
use super::scheduler::{allocate_cpu, CpuRequest};
use super::settings::{micros_to_secs, Micros, SimulationSettings, MICROS_PER_SEC};
use super::trace::{DropReason, EventKind, EventTrace, TraceEvent};
use crate::adaptor::{AdaptorSet, UnknownEdge, Verdict};
use crate::config::{Config, RateLimit};
use crate::stack::{EdgeId, EnvironmentProfile, StackModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
}

#[derive(Debug, Clone)]
struct TimerRt {
    topic: Arc<str>,
    rate_hz: f64,
    cost: f64,
    start: Micros,
    fired: u64,
    /// A job from this timer is queued and not yet started.
    waiting: bool,
}

#[derive(Debug, Clone)]
struct SubRt {
    edge: EdgeId,
    cost: f64,
    triggers: Option<Arc<str>>,
}

#[derive(Debug, Clone)]
struct NodeRt {
    id: Arc<str>,
    running: bool,
    pool: WorkerPoolState,
    cgroup: CgroupState,
    timers: Vec<TimerRt>,
    subs: Vec<SubRt>,
}

impl NodeRt {
    fn suspended(&self) -> bool {
        matches!(self.cgroup.quota, Some(q) if q <= 0.0)
    }

    fn live(&self) -> bool {
        self.running && !self.suspended()
    }
}

/// A running simulation.
#[derive(Debug, Clone)]
pub struct Engine {
    settings: SimulationSettings,
    quantum: Micros,
    period: Micros,
    sample: Micros,
    env: EnvironmentProfile,
    nodes: Vec<NodeRt>,
    index: BTreeMap<String, usize>,
    /// topic -> (node index, subscription index)
    subscribers: BTreeMap<Arc<str>, Vec<(usize, usize)>>,
    adaptors: AdaptorSet,
    rng: ChaCha8Rng,
    now: Micros,
    trace: EventTrace,
    /// CPU-seconds granted to each node in the last quantum, in stack order.
    grants: Vec<f64>,
}

/// Simulates `stack` under `config` for `settings.duration` seconds.
pub fn run_simulation(
    stack: &StackModel,
    config: &Config,
    settings: &SimulationSettings,
) -> Result<EventTrace, SimError> {
    let mut engine = Engine::new(stack, config, settings)?;
    engine.run_until(settings.end());
    Ok(engine.finish())
}

fn check_config(stack: &StackModel, config: &Config) -> Result<(), SimError> {
    for n in config.quotas.keys() {
        if stack.node(n).is_none() {
            return Err(SimError::ConfigMismatch(format!(
                "quota for unknown node {n}"
            )));
        }
    }
    for e in config.adaptors.keys() {
        if !stack.has_edge(e) {
            return Err(SimError::ConfigMismatch(format!(
                "adaptor on unknown edge {e}"
            )));
        }
    }
    Ok(())
}

impl Engine {
    /// All nodes of the stack start running at time zero.
    pub fn new(
        stack: &StackModel,
        config: &Config,
        settings: &SimulationSettings,
    ) -> Result<Self, SimError> {
        check_config(stack, config)?;
        let running = stack.nodes.iter().map(|n| n.id.clone()).collect();
        Self::build(
            stack,
            &config.quotas,
            AdaptorSet::from_config(config),
            settings,
            &running,
        )
    }

    /// Engine with an explicit adaptor set and the given nodes running.
    pub fn build(
        stack: &StackModel,
        quotas: &BTreeMap<String, f64>,
        adaptors: AdaptorSet,
        settings: &SimulationSettings,
        running: &BTreeSet<String>,
    ) -> Result<Self, SimError> {
        settings.validate().map_err(SimError::InvalidSettings)?;
        let period = settings.period();
        let mut interned: BTreeMap<String, Arc<str>> = BTreeMap::new();
        let mut intern = |s: &str| -> Arc<str> {
            interned
                .entry(s.to_string())
                .or_insert_with(|| Arc::from(s))
                .clone()
        };
        let mut nodes = Vec::with_capacity(stack.nodes.len());
        let mut subscribers: BTreeMap<Arc<str>, Vec<(usize, usize)>> = BTreeMap::new();
        for (ni, n) in stack.nodes.iter().enumerate() {
            let timers = n
                .publications
                .iter()
                .filter(|p| n.is_timer_driven(&p.topic))
                .map(|p| TimerRt {
                    topic: intern(&p.topic),
                    rate_hz: p.rate_hz,
                    cost: p.cost,
                    start: 0,
                    fired: 0,
                    waiting: false,
                })
                .collect();
            let subs = n
                .subscriptions
                .iter()
                .enumerate()
                .map(|(si, s)| {
                    let topic = intern(&s.topic);
                    subscribers.entry(topic).or_default().push((ni, si));
                    let trigger_cost = s
                        .triggers
                        .as_ref()
                        .and_then(|t| n.publication(t))
                        .map_or(0.0, |p| p.cost);
                    SubRt {
                        edge: EdgeId::new(&s.topic, &n.id),
                        cost: s.cost + trigger_cost,
                        triggers: s.triggers.as_deref().map(&mut intern),
                    }
                })
                .collect();
            nodes.push(NodeRt {
                id: intern(&n.id),
                running: running.contains(&n.id),
                pool: WorkerPoolState::new(n.workers),
                cgroup: CgroupState::new(quotas.get(&n.id).copied(), period),
                timers,
                subs,
            });
        }
        Ok(Self {
            quantum: settings.quantum(),
            period,
            sample: settings.sample_interval(),
            settings: settings.clone(),
            env: stack.env.clone(),
            index: stack
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| (n.id.clone(), i))
                .collect(),
            nodes,
            subscribers,
            adaptors,
            rng: ChaCha8Rng::seed_from_u64(settings.seed),
            now: 0,
            grants: vec![0.0; stack.nodes.len()],
            trace: EventTrace {
                duration: 0,
                node_apps: stack.node_apps(),
                events: Vec::new(),
            },
        })
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    pub fn settings(&self) -> &SimulationSettings {
        &self.settings
    }

    pub fn trace(&self) -> &EventTrace {
        &self.trace
    }

    pub fn adaptors(&self) -> &AdaptorSet {
        &self.adaptors
    }

    pub fn running_nodes(&self) -> BTreeSet<String> {
        self.nodes
            .iter()
            .filter(|n| n.running)
            .map(|n| n.id.to_string())
            .collect()
    }

    /// CPU-seconds each node was granted in the last quantum, in stack
    /// order.
    pub fn last_grants(&self) -> &[f64] {
        &self.grants
    }

    pub fn quota(&self, node: &str) -> Option<f64> {
        self.index
            .get(node)
            .and_then(|&i| self.nodes[i].cgroup.quota)
    }

    /// Advances until simulated time reaches `t`.
    pub fn run_until(&mut self, t: Micros) {
        while self.now < t {
            self.step();
        }
        self.trace.duration = self.now.max(self.trace.duration);
    }

    /// Ends the run and marks callbacks still in flight as truncated.
    pub fn finish(mut self) -> EventTrace {
        let now = self.now;
        for i in 0..self.nodes.len() {
            let node = self.nodes[i].id.clone();
            let topics: Vec<Arc<str>> = self.nodes[i]
                .pool
                .active
                .iter()
                .map(|j| j.topic.clone())
                .collect();
            for topic in topics {
                self.emit(
                    now,
                    EventKind::CallbackTruncated {
                        node: node.clone(),
                        topic,
                    },
                );
            }
        }
        self.trace.duration = now;
        self.trace
    }

    fn emit(&mut self, time: Micros, kind: EventKind) {
        self.trace.events.push(TraceEvent { time, kind });
    }

    pub fn set_rate(&mut self, edge: &EdgeId, rate: RateLimit) -> Result<(), UnknownEdge> {
        self.adaptors.set_rate(edge, rate)?;
        self.record_rate(edge, rate);
        Ok(())
    }

    fn record_rate(&mut self, edge: &EdgeId, rate: RateLimit) {
        let now = self.now;
        self.emit(
            now,
            EventKind::RateChanged {
                topic: Arc::from(edge.topic.as_str()),
                subscriber: Arc::from(edge.subscriber.as_str()),
                rate,
            },
        );
    }

    pub fn set_quota(&mut self, node: &str, quota: Option<f64>) -> Result<(), SimError> {
        let i = *self
            .index
            .get(node)
            .ok_or_else(|| SimError::UnknownNode(node.to_string()))?;
        let was_live = self.nodes[i].live();
        self.nodes[i].cgroup.quota = quota;
        let now = self.now;
        let id = self.nodes[i].id.clone();
        self.emit(now, EventKind::QuotaChanged { node: id, quota });
        match (was_live, self.nodes[i].live()) {
            (true, false) => self.stop_work(i),
            (false, true) => self.restart_timers(i),
            _ => {}
        }
        Ok(())
    }

    /// Applies every quota and adaptor of `config`; adaptors absent from the
    /// config are opened.
    pub fn apply_config(&mut self, config: &Config) -> Result<(), SimError> {
        for (n, q) in &config.quotas {
            if self.quota(n) != Some(*q) {
                self.set_quota(n, Some(*q))?;
            }
        }
        let open: Vec<EdgeId> = self
            .adaptors
            .iter()
            .filter(|a| !config.adaptors.contains_key(&a.edge) && a.rate != RateLimit::Unlimited)
            .map(|a| a.edge.clone())
            .collect();
        for e in open {
            self.set_rate(&e, RateLimit::Unlimited)
                .expect("edge taken from the adaptor set");
        }
        for (e, r) in &config.adaptors {
            match self.adaptors.get(e).map(|a| a.rate) {
                Some(current) if current == *r => {}
                Some(_) => self.set_rate(e, *r).expect("edge present"),
                None => {
                    if !self
                        .nodes
                        .iter()
                        .any(|n| n.subs.iter().any(|s| &s.edge == e))
                    {
                        return Err(SimError::ConfigMismatch(format!(
                            "adaptor on unknown edge {e}"
                        )));
                    }
                    self.adaptors.insert(e.clone(), *r);
                    self.record_rate(e, *r);
                }
            }
        }
        Ok(())
    }

    pub fn spawn(&mut self, node: &str) -> Result<(), SimError> {
        let i = *self
            .index
            .get(node)
            .ok_or_else(|| SimError::UnknownNode(node.to_string()))?;
        if self.nodes[i].running {
            return Ok(());
        }
        self.nodes[i].running = true;
        let now = self.now;
        let id = self.nodes[i].id.clone();
        self.emit(now, EventKind::NodeSpawned { node: id });
        self.restart_timers(i);
        Ok(())
    }

    pub fn kill(&mut self, node: &str) -> Result<(), SimError> {
        let i = *self
            .index
            .get(node)
            .ok_or_else(|| SimError::UnknownNode(node.to_string()))?;
        if !self.nodes[i].running {
            return Ok(());
        }
        self.stop_work(i);
        self.nodes[i].running = false;
        let now = self.now;
        let id = self.nodes[i].id.clone();
        self.emit(now, EventKind::NodeKilled { node: id });
        Ok(())
    }

    pub fn set_environment(&mut self, env: EnvironmentProfile) {
        let now = self.now;
        self.emit(
            now,
            EventKind::EnvironmentChanged {
                name: Arc::from(env.name.as_str()),
            },
        );
        self.env = env;
        for i in 0..self.nodes.len() {
            self.restart_timers(i);
        }
    }

    pub fn environment(&self) -> &EnvironmentProfile {
        &self.env
    }

    fn stop_work(&mut self, i: usize) {
        let now = self.now;
        let node = self.nodes[i].id.clone();
        for job in self.nodes[i].pool.clear() {
            self.emit(
                now,
                EventKind::CallbackTruncated {
                    node: node.clone(),
                    topic: job.topic,
                },
            );
        }
        for t in &mut self.nodes[i].timers {
            t.waiting = false;
        }
    }

    fn restart_timers(&mut self, i: usize) {
        let now = self.now;
        for t in &mut self.nodes[i].timers {
            t.start = now;
            t.fired = 0;
        }
    }

    fn due(&self, t: &TimerRt) -> Micros {
        let rate = t.rate_hz * self.env.rate_multiplier;
        let offset = (t.fired as f64 * MICROS_PER_SEC / rate).round() as Micros;
        let raw = t.start + offset;
        raw.div_ceil(self.quantum) * self.quantum
    }

    fn job_cost(&mut self, base: f64) -> f64 {
        let j = self.env.jitter_fraction;
        let u = if j > 0.0 {
            self.rng.gen_range(-j..=j)
        } else {
            0.0
        };
        base * self.env.cost_multiplier * (1.0 + u)
    }

    fn dispatch(&mut self, i: usize, job: Job, now: Micros) {
        let topic = job.topic.clone();
        if self.nodes[i].pool.dispatch_callback(job) == Dispatch::Started {
            let node = self.nodes[i].id.clone();
            self.emit(now, EventKind::CallbackStarted { node, topic });
            // Timer jobs only wait when queued.
        }
    }

    fn publish(&mut self, topic: Arc<str>, publisher: usize, now: Micros) {
        let node = self.nodes[publisher].id.clone();
        self.emit(
            now,
            EventKind::MessagePublished {
                topic: topic.clone(),
                node,
            },
        );
        let Some(targets) = self.subscribers.get(&topic).cloned() else {
            return;
        };
        for (ni, si) in targets {
            if !self.nodes[ni].running {
                continue;
            }
            let edge = self.nodes[ni].subs[si].edge.clone();
            if self.nodes[ni].suspended() {
                let subscriber = self.nodes[ni].id.clone();
                self.emit(
                    now,
                    EventKind::MessageDropped {
                        topic: topic.clone(),
                        subscriber,
                        reason: DropReason::Suspended,
                    },
                );
                continue;
            }
            if self.adaptors.filter(&edge, now) == Verdict::Drop {
                let subscriber = self.nodes[ni].id.clone();
                self.emit(
                    now,
                    EventKind::MessageDropped {
                        topic: topic.clone(),
                        subscriber,
                        reason: DropReason::RateLimited,
                    },
                );
                continue;
            }
            let base = self.nodes[ni].subs[si].cost;
            let cost = self.job_cost(base);
            let job = Job {
                source: JobSource::Callback {
                    index: si,
                    published_at: now,
                },
                topic: topic.clone(),
                remaining: cost,
            };
            self.dispatch(ni, job, now);
        }
    }

    fn step(&mut self) {
        let t0 = self.now;
        let q = self.quantum;
        let q_secs = micros_to_secs(q);

        if t0.is_multiple_of(self.period) {
            for i in 0..self.nodes.len() {
                if self.nodes[i].cgroup.rollover() {
                    let node = self.nodes[i].id.clone();
                    self.emit(t0, EventKind::ThrottleEnded { node });
                }
            }
        }

        for i in 0..self.nodes.len() {
            if !self.nodes[i].live() {
                continue;
            }
            for ti in 0..self.nodes[i].timers.len() {
                while self.due(&self.nodes[i].timers[ti]) <= t0 {
                    self.nodes[i].timers[ti].fired += 1;
                    if self.nodes[i].timers[ti].waiting {
                        continue;
                    }
                    let base = self.nodes[i].timers[ti].cost;
                    let cost = self.job_cost(base);
                    let job = Job {
                        source: JobSource::Timer { index: ti },
                        topic: self.nodes[i].timers[ti].topic.clone(),
                        remaining: cost,
                    };
                    let before = self.nodes[i].pool.pending.len();
                    self.dispatch(i, job, t0);
                    if self.nodes[i].pool.pending.len() > before {
                        self.nodes[i].timers[ti].waiting = true;
                    }
                }
            }
        }

        let requests: Vec<CpuRequest> = self
            .nodes
            .iter()
            .map(|n| {
                if !n.live() || n.cgroup.is_throttled() {
                    return CpuRequest {
                        demand: 0.0,
                        quota_remaining: 0.0,
                        parallelism: 0,
                        weight: 0.0,
                    };
                }
                CpuRequest {
                    demand: n.pool.demand(q_secs),
                    quota_remaining: n.cgroup.remaining(),
                    parallelism: n.pool.active.len(),
                    weight: n.pool.active.len() as f64,
                }
            })
            .collect();
        let grants = allocate_cpu(&requests, self.settings.budget_cores, q_secs);
        self.grants.clone_from(&grants);

        let t1 = t0 + q;
        let mut finished: Vec<Vec<Job>> = Vec::with_capacity(self.nodes.len());
        for (i, &grant) in grants.iter().enumerate() {
            let n = &self.nodes[i];
            if !n.live() || n.cgroup.is_throttled() {
                finished.push(Vec::new());
                continue;
            }
            let eff = n
                .pool
                .efficiency(grant / q_secs, self.settings.switch_overhead);
            let done = self.nodes[i].pool.run(grant * eff, q_secs);
            if grant > 0.0 && enforce_quota(&mut self.nodes[i].cgroup, grant, t1) {
                let node = self.nodes[i].id.clone();
                self.emit(t1, EventKind::ThrottleStarted { node });
            }
            finished.push(done);
        }

        for (i, done) in finished.into_iter().enumerate() {
            if done.is_empty() {
                continue;
            }
            let node = self.nodes[i].id.clone();
            for job in done {
                match job.source {
                    JobSource::Timer { .. } => {
                        self.emit(
                            t1,
                            EventKind::CallbackFinished {
                                node: node.clone(),
                                topic: job.topic.clone(),
                                published_at: None,
                            },
                        );
                        self.publish(job.topic, i, t1);
                    }
                    JobSource::Callback {
                        index,
                        published_at,
                    } => {
                        self.emit(
                            t1,
                            EventKind::CallbackFinished {
                                node: node.clone(),
                                topic: job.topic,
                                published_at: Some(published_at),
                            },
                        );
                        if let Some(out) = self.nodes[i].subs[index].triggers.clone() {
                            self.publish(out, i, t1);
                        }
                    }
                }
            }
            for job in self.nodes[i].pool.admit() {
                if let JobSource::Timer { index } = job.source {
                    self.nodes[i].timers[index].waiting = false;
                }
                self.emit(
                    t1,
                    EventKind::CallbackStarted {
                        node: node.clone(),
                        topic: job.topic,
                    },
                );
            }
        }

        self.now = t1;
        if t1.is_multiple_of(self.sample) {
            for i in 0..self.nodes.len() {
                if self.nodes[i].running {
                    let node = self.nodes[i].id.clone();
                    let count = self.nodes[i].pool.active.len() as u32;
                    self.emit(t1, EventKind::ActiveThreadSample { node, count });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Provenance;
    use crate::stack::{AppClass, NodeSpec, Publication, Subscription, Topic};

    fn sensor(rate: f64, cost: f64) -> NodeSpec {
        NodeSpec {
            id: "sensor".into(),
            app: "a".into(),
            class: AppClass::Core,
            workers: 1,
            publications: vec![Publication {
                topic: "raw".into(),
                rate_hz: rate,
                cost,
            }],
            subscriptions: vec![],
        }
    }

    fn worker(cost: f64, workers: usize) -> NodeSpec {
        NodeSpec {
            id: "proc".into(),
            app: "b".into(),
            class: AppClass::NonCore,
            workers,
            publications: vec![Publication {
                topic: "out".into(),
                rate_hz: 0.0,
                cost: 0.0,
            }],
            subscriptions: vec![Subscription {
                topic: "raw".into(),
                cost,
                triggers: Some("out".into()),
            }],
        }
    }

    fn stack(nodes: Vec<NodeSpec>) -> StackModel {
        StackModel {
            stack_id: "t".into(),
            nodes,
            topics: vec![
                Topic {
                    id: "raw".into(),
                    kind: String::new(),
                },
                Topic {
                    id: "out".into(),
                    kind: String::new(),
                },
            ],
            env: EnvironmentProfile::default(),
        }
    }

    fn settings(secs: f64, cores: f64) -> SimulationSettings {
        SimulationSettings {
            duration: secs,
            budget_cores: cores,
            ..SimulationSettings::default()
        }
    }

    fn pubs(trace: &EventTrace, topic: &str) -> Vec<Micros> {
        trace
            .events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::MessagePublished { topic: t, .. } if &**t == topic => Some(e.time),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn timer_publishes_at_rate() {
        let s = stack(vec![sensor(10.0, 0.001)]);
        let trace =
            run_simulation(&s, &Config::empty(Provenance::Default), &settings(1.0, 1.0)).unwrap();
        let times = pubs(&trace, "raw");
        assert_eq!(times.len(), 10);
        assert_eq!(times[0], 1_000);
        assert_eq!(times[9], 901_000);
    }

    #[test]
    fn callback_latency_is_its_cost() {
        let s = stack(vec![sensor(10.0, 0.001), worker(0.005, 1)]);
        let trace = run_simulation(
            &s,
            &Config::empty(Provenance::Default),
            &settings(0.05, 1.0),
        )
        .unwrap();
        let finish = trace.events.iter().find_map(|e| match &e.kind {
            EventKind::CallbackFinished {
                published_at: Some(p),
                ..
            } => Some((e.time, *p)),
            _ => None,
        });
        assert_eq!(finish, Some((6_000, 1_000)));
        assert_eq!(pubs(&trace, "out"), vec![6_000]);
    }

    #[test]
    fn quota_throttles_busy_node() {
        let s = stack(vec![sensor(1.0, 10.0)]);
        let mut cfg = Config::empty(Provenance::Default);
        cfg.quotas.insert("sensor".into(), 0.5);
        let trace = run_simulation(&s, &cfg, &settings(0.3, 1.0)).unwrap();
        let throttles: Vec<Micros> = trace
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::ThrottleStarted { .. }))
            .map(|e| e.time)
            .collect();
        assert_eq!(throttles, vec![50_000, 150_000, 250_000]);
    }

    #[test]
    fn pool_caps_concurrency() {
        // Ten publishers fire at once into a ten-worker pool, plus one more.
        let mut nodes: Vec<NodeSpec> = (0..11)
            .map(|i| NodeSpec {
                id: format!("s{i:02}"),
                ..sensor(1.0, 0.0)
            })
            .collect();
        nodes.push(worker(0.3, 10));
        let s = stack(nodes);
        let trace = run_simulation(
            &s,
            &Config::empty(Provenance::Default),
            &settings(0.01, 16.0),
        )
        .unwrap();
        let started = trace
            .events
            .iter()
            .filter(
                |e| matches!(&e.kind, EventKind::CallbackStarted { node, .. } if &**node == "proc"),
            )
            .count();
        assert_eq!(started, 10);
    }

    #[test]
    fn zero_quota_suspends() {
        let s = stack(vec![sensor(10.0, 0.001), worker(0.005, 1)]);
        let mut cfg = Config::empty(Provenance::Default);
        cfg.quotas.insert("proc".into(), 0.0);
        let trace = run_simulation(&s, &cfg, &settings(1.0, 1.0)).unwrap();
        assert!(pubs(&trace, "out").is_empty());
        let dropped = trace
            .events
            .iter()
            .filter(|e| {
                matches!(
                    e.kind,
                    EventKind::MessageDropped {
                        reason: DropReason::Suspended,
                        ..
                    }
                )
            })
            .count();
        assert_eq!(dropped, 10);
    }

    #[test]
    fn adaptor_decimates_delivery() {
        let s = stack(vec![sensor(10.0, 0.001), worker(0.001, 1)]);
        let mut cfg = Config::empty(Provenance::Default);
        cfg.adaptors
            .insert(EdgeId::new("raw", "proc"), RateLimit::Hz(2.0));
        let trace = run_simulation(&s, &cfg, &settings(2.0, 1.0)).unwrap();
        assert_eq!(pubs(&trace, "out").len(), 4);
    }

    #[test]
    fn unknown_node_in_config_rejected() {
        let s = stack(vec![sensor(10.0, 0.001)]);
        let mut cfg = Config::empty(Provenance::Default);
        cfg.quotas.insert("ghost".into(), 0.5);
        assert!(matches!(
            run_simulation(&s, &cfg, &settings(1.0, 1.0)),
            Err(SimError::ConfigMismatch(_))
        ));
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let mut s = stack(vec![sensor(30.0, 0.004), worker(0.02, 2)]);
        s.env.jitter_fraction = 0.3;
        let cfg = Config::empty(Provenance::Default);
        let a = run_simulation(&s, &cfg, &settings(2.0, 1.0).with_seed(7)).unwrap();
        let b = run_simulation(&s, &cfg, &settings(2.0, 1.0).with_seed(7)).unwrap();
        let c = run_simulation(&s, &cfg, &settings(2.0, 1.0).with_seed(8)).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        assert_ne!(a.to_text(), c.to_text());
    }

    #[test]
    fn killed_node_stops_publishing() {
        let s = stack(vec![sensor(10.0, 0.001)]);
        let mut e =
            Engine::new(&s, &Config::empty(Provenance::Default), &settings(2.0, 1.0)).unwrap();
        e.run_until(1_000_000);
        e.kill("sensor").unwrap();
        e.run_until(2_000_000);
        assert!(e.running_nodes().is_empty());
        assert_eq!(pubs(&e.finish(), "raw").len(), 10);
    }
}
