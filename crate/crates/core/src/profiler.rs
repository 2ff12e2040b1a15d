//! Windowed metrics, constraint satisfaction and the scalar objective.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};
use thiserror::Error;

use crate::sim::{micros_to_secs, secs_to_micros, EventKind, EventTrace, Micros};
use crate::stack::{AppClass, AppTarget, Cap, MetricKind, PerformanceSpec};

pub const DEFAULT_WINDOW_SECS: f64 = 1.0;
/// Minimum satisfaction rate, in percent, for a configuration to count as
/// feasible.
pub const FEASIBILITY_THRESHOLD: f64 = 95.0;
/// Unbounded caps are normalized at this multiple of the target.
pub const UNBOUNDED_CEILING: f64 = 2.0;
/// Percentile of per-window performance reported for core apps.
pub const TAIL_PERCENTILE: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("trace is shorter than one window")]
    EmptyTrace,
    #[error("no series for core app {0}")]
    MissingCoreSeries(String),
    #[error("no value for non-core app {0}")]
    MissingNonCoreSeries(String),
    #[error("window length must be positive")]
    InvalidWindow,
}

/// Per-window values of one app's metric. Latency windows without a
/// completed callback hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub app: String,
    pub class: AppClass,
    pub metric: MetricKind,
    pub window_secs: f64,
    /// (window start in seconds, value)
    pub values: Vec<(f64, f64)>,
}

impl MetricSeries {
    /// Mean over windows that hold a value; NaN if none do.
    pub fn mean(&self) -> f64 {
        let vals: Vec<f64> = self
            .values
            .iter()
            .map(|v| v.1)
            .filter(|v| !v.is_nan())
            .collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    /// App id to mean metric value.
    pub means: BTreeMap<String, f64>,
    pub satisfaction_rate: f64,
    pub feasible: bool,
    /// Scalarized non-core objective, computed regardless of feasibility.
    pub objective: f64,
    /// Core app id to the 5th percentile of its per-window performance
    /// ratio (value over target, inverted for latency). Empty windows count
    /// as zero.
    pub core_tail: BTreeMap<String, f64>,
}

impl EvaluationResult {
    /// Objective used for ranking: minus infinity when infeasible.
    pub fn ranked_objective(&self) -> f64 {
        if self.feasible {
            self.objective
        } else {
            f64::NEG_INFINITY
        }
    }
}

pub fn compute_metrics(
    trace: &EventTrace,
    spec: &PerformanceSpec,
    window_secs: f64,
) -> Result<Vec<MetricSeries>, ProfileError> {
    compute_metrics_range(trace, spec, 0, trace.duration, window_secs)
}

/// Metrics over whole windows of `[start, end)`; a trailing partial window
/// is ignored.
pub fn compute_metrics_range(
    trace: &EventTrace,
    spec: &PerformanceSpec,
    start: Micros,
    end: Micros,
    window_secs: f64,
) -> Result<Vec<MetricSeries>, ProfileError> {
    if window_secs <= 0.0 || !window_secs.is_finite() {
        return Err(ProfileError::InvalidWindow);
    }
    let window = secs_to_micros(window_secs);
    let n = (end.saturating_sub(start) / window) as usize;
    if n == 0 {
        return Err(ProfileError::EmptyTrace);
    }

    let mut counts = vec![vec![0.0f64; n]; spec.apps.len()];
    let mut latency_sums = vec![vec![0.0f64; n]; spec.apps.len()];
    let mut by_key: HashMap<(&str, &str), Vec<usize>> = HashMap::new();
    for (i, a) in spec.apps.iter().enumerate() {
        by_key
            .entry((a.metric.topic(), a.app.as_str()))
            .or_default()
            .push(i);
    }
    let app_of = |node: &str| trace.node_apps.get(node).map(String::as_str);
    let stop = start + n as Micros * window;

    for e in &trace.events[trace.position_at(start)..] {
        if e.time >= stop {
            break;
        }
        let w = ((e.time - start) / window) as usize;
        match &e.kind {
            EventKind::MessagePublished { topic, node } => {
                let Some(app) = app_of(node) else { continue };
                if let Some(ix) = by_key.get(&(&**topic, app)) {
                    for &i in ix {
                        if spec.apps[i].metric.higher_is_better() {
                            counts[i][w] += 1.0;
                        }
                    }
                }
            }
            EventKind::CallbackFinished {
                node,
                topic,
                published_at: Some(p),
            } => {
                let Some(app) = app_of(node) else { continue };
                if let Some(ix) = by_key.get(&(&**topic, app)) {
                    for &i in ix {
                        if !spec.apps[i].metric.higher_is_better() {
                            counts[i][w] += 1.0;
                            latency_sums[i][w] += micros_to_secs(e.time - p);
                        }
                    }
                }
            }
            _ => {}
        }
    }

    Ok(spec
        .apps
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let values = (0..n)
                .map(|w| {
                    let t = micros_to_secs(start + w as Micros * window);
                    let v = if a.metric.higher_is_better() {
                        counts[i][w] / window_secs
                    } else if counts[i][w] > 0.0 {
                        latency_sums[i][w] / counts[i][w]
                    } else {
                        f64::NAN
                    };
                    (t, v)
                })
                .collect();
            MetricSeries {
                app: a.app.clone(),
                class: a.class,
                metric: a.metric.clone(),
                window_secs,
                values,
            }
        })
        .collect())
}

fn series_for<'a>(series: &'a [MetricSeries], app: &str) -> Option<&'a MetricSeries> {
    series.iter().find(|s| s.app == app)
}

/// Whether every core app meets its target in each window.
pub fn satisfied_windows(
    series: &[MetricSeries],
    spec: &PerformanceSpec,
) -> Result<Vec<bool>, ProfileError> {
    let core: Vec<(&AppTarget, &MetricSeries)> = spec
        .core()
        .map(|a| {
            series_for(series, &a.app)
                .map(|s| (a, s))
                .ok_or_else(|| ProfileError::MissingCoreSeries(a.app.clone()))
        })
        .collect::<Result<_, _>>()?;
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    Ok((0..n)
        .map(|w| {
            core.iter().all(|(a, s)| {
                s.values
                    .get(w)
                    .is_some_and(|v| a.metric.meets(v.1, a.target))
            })
        })
        .collect())
}

/// Percentage of windows in which every core app meets its target.
pub fn satisfaction_rate(
    series: &[MetricSeries],
    spec: &PerformanceSpec,
) -> Result<f64, ProfileError> {
    let ok = satisfied_windows(series, spec)?;
    if ok.is_empty() {
        return Ok(0.0);
    }
    Ok(100.0 * ok.iter().filter(|b| **b).count() as f64 / ok.len() as f64)
}

/// Performance relative to target; above 1 is better than the target.
pub fn performance_ratio(metric: &MetricKind, value: f64, target: f64) -> f64 {
    if value.is_nan() {
        return 0.0;
    }
    if metric.higher_is_better() {
        if target > 0.0 {
            value / target
        } else {
            f64::INFINITY
        }
    } else if value > 0.0 {
        target / value
    } else {
        f64::INFINITY
    }
}

/// Contribution of one non-core app, in `[0, 1]`.
pub fn app_contribution(target: &AppTarget, value: f64) -> f64 {
    let ceiling = match target.cap {
        Cap::Finite(c) => performance_ratio(&target.metric, c, target.target),
        Cap::Unbounded => UNBOUNDED_CEILING,
    };
    let r = performance_ratio(&target.metric, value, target.target);
    if !ceiling.is_finite() || ceiling <= 0.0 {
        return if r >= ceiling { 1.0 } else { 0.0 };
    }
    r.min(ceiling) / ceiling
}

/// Sum of capped, normalized non-core performance.
pub fn scalarize(
    values: &BTreeMap<String, f64>,
    spec: &PerformanceSpec,
) -> Result<f64, ProfileError> {
    spec.non_core()
        .map(|a| {
            values
                .get(&a.app)
                .map(|v| app_contribution(a, *v))
                .ok_or_else(|| ProfileError::MissingNonCoreSeries(a.app.clone()))
        })
        .try_fold(0.0, |acc, c| c.map(|c| acc + c))
}

fn tail_ratio(a: &AppTarget, s: &MetricSeries) -> f64 {
    let ratios: Vec<f64> = s
        .values
        .iter()
        .map(|v| performance_ratio(&a.metric, v.1, a.target).min(1e6))
        .collect();
    Data::new(ratios).percentile(TAIL_PERCENTILE)
}

/// Summarizes a set of series.
pub fn evaluate_series(
    series: &[MetricSeries],
    spec: &PerformanceSpec,
) -> Result<EvaluationResult, ProfileError> {
    let satisfaction_rate = satisfaction_rate(series, spec)?;
    let means: BTreeMap<String, f64> = series.iter().map(|s| (s.app.clone(), s.mean())).collect();
    let objective = scalarize(&means, spec)?;
    let core_tail = spec
        .core()
        .filter_map(|a| series_for(series, &a.app).map(|s| (a.app.clone(), tail_ratio(a, s))))
        .collect();
    Ok(EvaluationResult {
        means,
        satisfaction_rate,
        feasible: satisfaction_rate >= FEASIBILITY_THRESHOLD,
        objective,
        core_tail,
    })
}

pub fn evaluate(
    trace: &EventTrace,
    spec: &PerformanceSpec,
    window_secs: f64,
) -> Result<EvaluationResult, ProfileError> {
    evaluate_series(&compute_metrics(trace, spec, window_secs)?, spec)
}

/// Writes `window_start,app_id,metric,value,satisfied` rows.
pub fn write_series_csv<W: Write>(
    out: W,
    series: &[MetricSeries],
    spec: &PerformanceSpec,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["window_start", "app_id", "metric", "value", "satisfied"])?;
    for s in series {
        let target = spec.get(&s.app).map(|a| a.target);
        for (t, v) in &s.values {
            let sat = target.is_some_and(|tg| s.metric.meets(*v, tg));
            w.write_record([
                format!("{t}"),
                s.app.clone(),
                s.metric.label().to_string(),
                format!("{v}"),
                sat.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreadStats {
    pub mean: f64,
    pub max: u32,
    pub samples: usize,
}

/// Active-thread statistics of `node` over its samples in `[start, end)`.
pub fn thread_stats(trace: &EventTrace, node: &str, start: Micros, end: Micros) -> ThreadStats {
    let mut sum = 0.0;
    let mut max = 0;
    let mut samples = 0;
    for e in &trace.events[trace.position_at(start)..] {
        if e.time >= end {
            break;
        }
        if let EventKind::ActiveThreadSample { node: n, count } = &e.kind {
            if &**n == node {
                sum += *count as f64;
                max = max.max(*count);
                samples += 1;
            }
        }
    }
    ThreadStats {
        mean: if samples > 0 {
            sum / samples as f64
        } else {
            0.0
        },
        max,
        samples,
    }
}

/// Mean delay from publication to callback completion for messages on
/// `topic` handled by `node`, or None if none completed.
pub fn callback_latency(trace: &EventTrace, node: &str, topic: &str) -> Option<f64> {
    let (sum, n) = trace
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::CallbackFinished {
                node: n,
                topic: t,
                published_at: Some(p),
            } if &**n == node && &**t == topic => Some(micros_to_secs(e.time - p)),
            _ => None,
        })
        .fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{EventKind, TraceEvent};
    use std::sync::Arc;

    fn spec_freq(app: &str, class: AppClass, target: f64, cap: Cap) -> AppTarget {
        AppTarget {
            app: app.into(),
            class,
            metric: MetricKind::PublishFrequencyHz("out".into()),
            target,
            cap,
        }
    }

    fn trace_with_pubs(times: &[Micros], duration: Micros) -> EventTrace {
        let topic: Arc<str> = Arc::from("out");
        let node: Arc<str> = Arc::from("n");
        EventTrace {
            duration,
            node_apps: [("n".to_string(), "nav".to_string())].into(),
            events: times
                .iter()
                .map(|&t| TraceEvent {
                    time: t,
                    kind: EventKind::MessagePublished {
                        topic: topic.clone(),
                        node: node.clone(),
                    },
                })
                .collect(),
        }
    }

    #[test]
    fn counts_publishes_per_window() {
        let spec = PerformanceSpec {
            apps: vec![spec_freq("nav", AppClass::Core, 35.0, Cap::Finite(40.0))],
        };
        let times: Vec<Micros> = (0..35).map(|k| k * 20_000).collect();
        let s = compute_metrics(&trace_with_pubs(&times, 1_000_000), &spec, 1.0).unwrap();
        assert_eq!(s[0].values, vec![(0.0, 35.0)]);
    }

    #[test]
    fn fixed_spacing_gives_steady_rate() {
        let spec = PerformanceSpec {
            apps: vec![spec_freq("nav", AppClass::Core, 35.0, Cap::Finite(40.0))],
        };
        let times: Vec<Micros> = (0..200).map(|k| k * 25_000).collect();
        let s = compute_metrics(&trace_with_pubs(&times, 5_000_000), &spec, 1.0).unwrap();
        assert_eq!(s[0].values.len(), 5);
        assert!(s[0].values.iter().all(|v| v.1 == 40.0));
        assert_eq!(satisfaction_rate(&s, &spec).unwrap(), 100.0);
    }

    #[test]
    fn silent_topic_is_zero_hz() {
        let spec = PerformanceSpec {
            apps: vec![spec_freq("nav", AppClass::Core, 35.0, Cap::Finite(40.0))],
        };
        let s = compute_metrics(&trace_with_pubs(&[], 3_000_000), &spec, 1.0).unwrap();
        assert!(s[0].values.iter().all(|v| v.1 == 0.0));
    }

    #[test]
    fn short_trace_is_empty() {
        let spec = PerformanceSpec::default();
        assert_eq!(
            compute_metrics(&trace_with_pubs(&[], 500_000), &spec, 1.0),
            Err(ProfileError::EmptyTrace)
        );
    }

    #[test]
    fn steady_shortfall_never_satisfies() {
        let spec = PerformanceSpec {
            apps: vec![spec_freq("nav", AppClass::Core, 35.0, Cap::Finite(40.0))],
        };
        let times: Vec<Micros> = (0..120).map(|k| k * 83_334).collect();
        let s = compute_metrics(&trace_with_pubs(&times, 10_000_000), &spec, 1.0).unwrap();
        assert_eq!(satisfaction_rate(&s, &spec).unwrap(), 0.0);
    }

    #[test]
    fn partial_satisfaction() {
        let spec = PerformanceSpec {
            apps: vec![spec_freq("nav", AppClass::Core, 1.0, Cap::Finite(1.0))],
        };
        let series = vec![MetricSeries {
            app: "nav".into(),
            class: AppClass::Core,
            metric: MetricKind::PublishFrequencyHz("out".into()),
            window_secs: 1.0,
            values: (0..200)
                .map(|w| (w as f64, if w == 7 { 0.0 } else { 1.0 }))
                .collect(),
        }];
        assert_eq!(satisfaction_rate(&series, &spec).unwrap(), 99.5);
    }

    #[test]
    fn missing_core_series() {
        let spec = PerformanceSpec {
            apps: vec![spec_freq("nav", AppClass::Core, 35.0, Cap::Finite(40.0))],
        };
        assert_eq!(
            satisfaction_rate(&[], &spec),
            Err(ProfileError::MissingCoreSeries("nav".into()))
        );
    }

    #[test]
    fn capped_contributions() {
        let spec = PerformanceSpec {
            apps: vec![spec_freq("web", AppClass::NonCore, 10.0, Cap::Finite(10.0))],
        };
        let at = |v: f64| scalarize(&[("web".to_string(), v)].into(), &spec).unwrap();
        assert!((at(9.90) - 0.99).abs() < 1e-12);
        assert_eq!(at(10.0), 1.0);
        assert_eq!(at(12.0), 1.0);
        assert_eq!(
            scalarize(&BTreeMap::new(), &spec),
            Err(ProfileError::MissingNonCoreSeries("web".into()))
        );
    }

    #[test]
    fn unbounded_cap_uses_ceiling() {
        let a = spec_freq("web", AppClass::NonCore, 10.0, Cap::Unbounded);
        assert_eq!(app_contribution(&a, 10.0), 0.5);
        assert_eq!(app_contribution(&a, 20.0), 1.0);
        assert_eq!(app_contribution(&a, 50.0), 1.0);
    }

    #[test]
    fn latency_contribution_inverts() {
        let a = AppTarget {
            app: "obj".into(),
            class: AppClass::NonCore,
            metric: MetricKind::EndToEndLatencySeconds("image".into()),
            target: 0.5,
            cap: Cap::Finite(0.25),
        };
        assert_eq!(app_contribution(&a, 0.25), 1.0);
        assert_eq!(app_contribution(&a, 0.5), 0.5);
        assert_eq!(app_contribution(&a, 0.1), 1.0);
        assert_eq!(app_contribution(&a, f64::NAN), 0.0);
    }
}
