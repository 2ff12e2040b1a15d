//! Event traces and their line format.
//!
//! A serialized trace starts with header lines beginning with `#`:
//!
//! ```text
//! # trace v1 duration_us=5000000
//! # node <node_id> <app_id>
//! ```
//!
//! followed by one event per line, tab-separated, time first:
//!
//! ```text
//! <time_us>  PUB       <topic> <node>
//! <time_us>  START     <node>  <topic>
//! <time_us>  FINISH    <node>  <topic> <published_us|->
//! <time_us>  TRUNC     <node>  <topic>
//! <time_us>  DROP      <topic> <subscriber> <reason>
//! <time_us>  THROTTLE  <node>
//! <time_us>  UNTHROTTLE <node>
//! <time_us>  THREADS   <node>  <count>
//! <time_us>  RATE      <topic> <subscriber> <hz|unlimited>
//! <time_us>  QUOTA     <node>  <cores|none>
//! <time_us>  SPAWN     <node>
//! <time_us>  KILL      <node>
//! <time_us>  ENV       <profile>
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::config::RateLimit;

use super::settings::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    RateLimited,
    Suspended,
}

impl DropReason {
    fn as_str(&self) -> &'static str {
        match self {
            DropReason::RateLimited => "rate",
            DropReason::Suspended => "suspended",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    MessagePublished {
        topic: Arc<str>,
        node: Arc<str>,
    },
    CallbackStarted {
        node: Arc<str>,
        topic: Arc<str>,
    },
    /// `published_at` is the publication time of the consumed message;
    /// timer callbacks have none.
    CallbackFinished {
        node: Arc<str>,
        topic: Arc<str>,
        published_at: Option<Micros>,
    },
    /// A started callback still running when the trace ended or its node
    /// stopped.
    CallbackTruncated {
        node: Arc<str>,
        topic: Arc<str>,
    },
    MessageDropped {
        topic: Arc<str>,
        subscriber: Arc<str>,
        reason: DropReason,
    },
    ThrottleStarted {
        node: Arc<str>,
    },
    ThrottleEnded {
        node: Arc<str>,
    },
    ActiveThreadSample {
        node: Arc<str>,
        count: u32,
    },
    RateChanged {
        topic: Arc<str>,
        subscriber: Arc<str>,
        rate: RateLimit,
    },
    QuotaChanged {
        node: Arc<str>,
        quota: Option<f64>,
    },
    NodeSpawned {
        node: Arc<str>,
    },
    NodeKilled {
        node: Arc<str>,
    },
    EnvironmentChanged {
        name: Arc<str>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub time: Micros,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventTrace {
    pub duration: Micros,
    /// Node id to app id for every node that appears in the trace.
    pub node_apps: BTreeMap<String, String>,
    pub events: Vec<TraceEvent>,
}

impl EventTrace {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Index of the first event at or after `t`.
    pub fn position_at(&self, t: Micros) -> usize {
        self.events.partition_point(|e| e.time < t)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.events.len() * 32);
        let _ = writeln!(out, "# trace v1 duration_us={}", self.duration);
        for (n, a) in &self.node_apps {
            let _ = writeln!(out, "# node {n} {a}");
        }
        for e in &self.events {
            write_event(&mut out, e);
        }
        out
    }

    pub fn parse(text: &str) -> Result<EventTrace, String> {
        let mut trace = EventTrace::default();
        let mut interner: BTreeMap<String, Arc<str>> = BTreeMap::new();
        let mut intern = |s: &str| -> Arc<str> {
            interner
                .entry(s.to_string())
                .or_insert_with(|| Arc::from(s))
                .clone()
        };
        for (lineno, line) in text.lines().enumerate() {
            let err = |m: &str| format!("line {}: {m}", lineno + 1);
            if let Some(h) = line.strip_prefix("# ") {
                let parts: Vec<&str> = h.split(' ').collect();
                match parts.as_slice() {
                    ["trace", "v1", d] => {
                        trace.duration = d
                            .strip_prefix("duration_us=")
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| err("bad duration header"))?;
                    }
                    ["node", n, a] => {
                        trace.node_apps.insert(n.to_string(), a.to_string());
                    }
                    _ => return Err(err("unknown header")),
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() < 3 {
                return Err(err("too few fields"));
            }
            let time: Micros = f[0].parse().map_err(|_| err("bad time"))?;
            let arg = |i: usize| -> Result<&str, String> {
                f.get(i).copied().ok_or_else(|| err("missing field"))
            };
            let kind = match f[1] {
                "PUB" => EventKind::MessagePublished {
                    topic: intern(arg(2)?),
                    node: intern(arg(3)?),
                },
                "START" => EventKind::CallbackStarted {
                    node: intern(arg(2)?),
                    topic: intern(arg(3)?),
                },
                "FINISH" => EventKind::CallbackFinished {
                    node: intern(arg(2)?),
                    topic: intern(arg(3)?),
                    published_at: match arg(4)? {
                        "-" => None,
                        v => Some(v.parse().map_err(|_| err("bad publish time"))?),
                    },
                },
                "TRUNC" => EventKind::CallbackTruncated {
                    node: intern(arg(2)?),
                    topic: intern(arg(3)?),
                },
                "DROP" => EventKind::MessageDropped {
                    topic: intern(arg(2)?),
                    subscriber: intern(arg(3)?),
                    reason: match arg(4)? {
                        "rate" => DropReason::RateLimited,
                        "suspended" => DropReason::Suspended,
                        _ => return Err(err("bad drop reason")),
                    },
                },
                "THROTTLE" => EventKind::ThrottleStarted {
                    node: intern(arg(2)?),
                },
                "UNTHROTTLE" => EventKind::ThrottleEnded {
                    node: intern(arg(2)?),
                },
                "THREADS" => EventKind::ActiveThreadSample {
                    node: intern(arg(2)?),
                    count: arg(3)?.parse().map_err(|_| err("bad count"))?,
                },
                "RATE" => EventKind::RateChanged {
                    topic: intern(arg(2)?),
                    subscriber: intern(arg(3)?),
                    rate: match arg(4)? {
                        "unlimited" => RateLimit::Unlimited,
                        v => RateLimit::Hz(v.parse().map_err(|_| err("bad rate"))?),
                    },
                },
                "QUOTA" => EventKind::QuotaChanged {
                    node: intern(arg(2)?),
                    quota: match arg(3)? {
                        "none" => None,
                        v => Some(v.parse().map_err(|_| err("bad quota"))?),
                    },
                },
                "SPAWN" => EventKind::NodeSpawned {
                    node: intern(arg(2)?),
                },
                "KILL" => EventKind::NodeKilled {
                    node: intern(arg(2)?),
                },
                "ENV" => EventKind::EnvironmentChanged {
                    name: intern(arg(2)?),
                },
                other => return Err(err(&format!("unknown event {other}"))),
            };
            trace.events.push(TraceEvent { time, kind });
        }
        Ok(trace)
    }
}

fn write_event(out: &mut String, e: &TraceEvent) {
    let t = e.time;
    let _ = match &e.kind {
        EventKind::MessagePublished { topic, node } => writeln!(out, "{t}\tPUB\t{topic}\t{node}"),
        EventKind::CallbackStarted { node, topic } => writeln!(out, "{t}\tSTART\t{node}\t{topic}"),
        EventKind::CallbackFinished {
            node,
            topic,
            published_at,
        } => match published_at {
            Some(p) => writeln!(out, "{t}\tFINISH\t{node}\t{topic}\t{p}"),
            None => writeln!(out, "{t}\tFINISH\t{node}\t{topic}\t-"),
        },
        EventKind::CallbackTruncated { node, topic } => {
            writeln!(out, "{t}\tTRUNC\t{node}\t{topic}")
        }
        EventKind::MessageDropped {
            topic,
            subscriber,
            reason,
        } => writeln!(out, "{t}\tDROP\t{topic}\t{subscriber}\t{}", reason.as_str()),
        EventKind::ThrottleStarted { node } => writeln!(out, "{t}\tTHROTTLE\t{node}"),
        EventKind::ThrottleEnded { node } => writeln!(out, "{t}\tUNTHROTTLE\t{node}"),
        EventKind::ActiveThreadSample { node, count } => {
            writeln!(out, "{t}\tTHREADS\t{node}\t{count}")
        }
        EventKind::RateChanged {
            topic,
            subscriber,
            rate,
        } => writeln!(out, "{t}\tRATE\t{topic}\t{subscriber}\t{rate}"),
        EventKind::QuotaChanged { node, quota } => match quota {
            Some(q) => writeln!(out, "{t}\tQUOTA\t{node}\t{q}"),
            None => writeln!(out, "{t}\tQUOTA\t{node}\tnone"),
        },
        EventKind::NodeSpawned { node } => writeln!(out, "{t}\tSPAWN\t{node}"),
        EventKind::NodeKilled { node } => writeln!(out, "{t}\tKILL\t{node}"),
        EventKind::EnvironmentChanged { name } => writeln!(out, "{t}\tENV\t{name}"),
    };
}
