//! The tunable configuration space: one CPU-quota knob per node and one
//! rate-limit knob per high-volume subscription edge touching a non-core
//! app.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::model::{AppClass, EdgeId, StackModel};
use crate::config::{Config, Provenance, RateLimit};

/// Edges carrying at most this many messages per second get no adaptor.
pub const ADAPTOR_MIN_RATE_HZ: f64 = 5.0;
pub const QUOTA_STEP: f64 = 0.05;
pub const ADAPTOR_STEP_HZ: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotaKnob {
    pub node: String,
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptorKnob {
    pub edge: EdgeId,
    pub min_hz: f64,
    pub max_hz: f64,
    pub step: f64,
    /// Nominal rate of the topic; a level at or above it leaves the edge
    /// unthrottled.
    pub nominal_hz: f64,
}

impl AdaptorKnob {
    fn limit(&self, hz: f64) -> RateLimit {
        if hz >= self.nominal_hz - 1e-9 {
            RateLimit::Unlimited
        } else {
            RateLimit::Hz(hz)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSpace {
    pub quota_knobs: Vec<QuotaKnob>,
    pub adaptor_knobs: Vec<AdaptorKnob>,
    pub total_cpu_budget: f64,
}

/// Grid values `min, min + step, ...` up to and including `max`.
fn levels(min: f64, max: f64, step: f64) -> Vec<f64> {
    if max <= min || step <= 0.0 {
        return vec![min];
    }
    let n = ((max - min) / step + 1e-9).floor() as usize;
    let mut v: Vec<f64> = (0..=n)
        .map(|i| ((min + i as f64 * step) * 1e6).round() / 1e6)
        .collect();
    if max - v[v.len() - 1] > 1e-9 {
        v.push(max);
    }
    v
}

fn nearest_index(levels: &[f64], value: f64) -> usize {
    let mut best = 0;
    for (i, l) in levels.iter().enumerate() {
        if (l - value).abs() < (levels[best] - value).abs() {
            best = i;
        }
    }
    best
}

/// Builds the configuration space for `stack` on a machine of `budget_cores`.
pub fn build_config_space(stack: &StackModel, budget_cores: f64) -> ConfigSpace {
    let quota_min = QUOTA_STEP.min(budget_cores);
    let quota_knobs = stack
        .nodes
        .iter()
        .map(|n| QuotaKnob {
            node: n.id.clone(),
            min: quota_min,
            max: budget_cores,
            step: QUOTA_STEP,
        })
        .collect();

    let mut adaptor_knobs = Vec::new();
    for n in &stack.nodes {
        for s in &n.subscriptions {
            let rate = stack.topic_rate(&s.topic);
            let involves_non_core = n.class == AppClass::NonCore
                || stack
                    .publishers(&s.topic)
                    .any(|p| p.class == AppClass::NonCore);
            if rate > ADAPTOR_MIN_RATE_HZ && involves_non_core {
                adaptor_knobs.push(AdaptorKnob {
                    edge: EdgeId::new(&s.topic, &n.id),
                    min_hz: ADAPTOR_STEP_HZ.min(rate),
                    max_hz: rate,
                    step: ADAPTOR_STEP_HZ,
                    nominal_hz: rate,
                });
            }
        }
    }

    ConfigSpace {
        quota_knobs,
        adaptor_knobs,
        total_cpu_budget: budget_cores,
    }
}

/// A config referenced a knob outside the space.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config references unknown knob {0}")]
pub struct UnknownKnob(pub String);

impl ConfigSpace {
    pub fn dims(&self) -> usize {
        self.quota_knobs.len() + self.adaptor_knobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims() == 0
    }

    pub fn knob_name(&self, i: usize) -> String {
        match self.knob_kind(i) {
            Ok(q) => format!("quota:{}", q.node),
            Err(a) => format!("rate:{}", a.edge),
        }
    }

    fn knob_kind(&self, i: usize) -> Result<&QuotaKnob, &AdaptorKnob> {
        if i < self.quota_knobs.len() {
            Ok(&self.quota_knobs[i])
        } else {
            Err(&self.adaptor_knobs[i - self.quota_knobs.len()])
        }
    }

    pub fn knob_levels(&self, i: usize) -> Vec<f64> {
        match self.knob_kind(i) {
            Ok(q) => levels(q.min, q.max, q.step),
            Err(a) => levels(a.min_hz, a.max_hz, a.step),
        }
    }

    /// Number of grid points, saturating.
    pub fn size(&self) -> u128 {
        (0..self.dims())
            .map(|i| self.knob_levels(i).len() as u128)
            .fold(1u128, |acc, n| acc.saturating_mul(n))
    }

    /// Config with every quota at the full budget and every adaptor open.
    pub fn default_config(&self) -> Config {
        let mut c = Config::empty(Provenance::Default);
        for q in &self.quota_knobs {
            c.quotas.insert(q.node.clone(), self.total_cpu_budget);
        }
        for a in &self.adaptor_knobs {
            c.adaptors.insert(a.edge.clone(), RateLimit::Unlimited);
        }
        c
    }

    /// Maps a point of the unit hypercube to the nearest grid config.
    pub fn config_from_unit(&self, x: &[f64], provenance: Provenance) -> Config {
        assert_eq!(x.len(), self.dims(), "point dimension mismatch");
        let mut c = Config::empty(provenance);
        for (i, &u) in x.iter().enumerate() {
            let lv = self.knob_levels(i);
            let idx =
                ((u.clamp(0.0, 1.0) * (lv.len() - 1) as f64).round() as usize).min(lv.len() - 1);
            match self.knob_kind(i) {
                Ok(q) => {
                    c.quotas.insert(q.node.clone(), lv[idx]);
                }
                Err(a) => {
                    c.adaptors.insert(a.edge.clone(), a.limit(lv[idx]));
                }
            }
        }
        c
    }

    /// Normalized coordinates of `config`. Missing or unlimited values map to
    /// the top of the knob range.
    pub fn unit_from_config(&self, config: &Config) -> Vec<f64> {
        (0..self.dims())
            .map(|i| {
                let lv = self.knob_levels(i);
                let value = match self.knob_kind(i) {
                    Ok(q) => config.quotas.get(&q.node).copied().unwrap_or(q.max),
                    Err(a) => match config.adaptors.get(&a.edge) {
                        Some(RateLimit::Hz(h)) => *h,
                        _ => a.max_hz,
                    },
                };
                if lv.len() == 1 {
                    0.5
                } else {
                    nearest_index(&lv, value) as f64 / (lv.len() - 1) as f64
                }
            })
            .collect()
    }

    /// The `index`-th grid config in mixed-radix order (first knob fastest).
    pub fn grid_point(&self, mut index: u128, provenance: Provenance) -> Config {
        let mut x = Vec::with_capacity(self.dims());
        for i in 0..self.dims() {
            let n = self.knob_levels(i).len() as u128;
            let k = index % n;
            index /= n;
            x.push(if n == 1 {
                0.0
            } else {
                k as f64 / (n - 1) as f64
            });
        }
        self.config_from_unit(&x, provenance)
    }

    /// Fails if the config names a knob that is not in this space.
    pub fn check(&self, config: &Config) -> Result<(), UnknownKnob> {
        for n in config.quotas.keys() {
            if !self.quota_knobs.iter().any(|q| &q.node == n) {
                return Err(UnknownKnob(format!("quota:{n}")));
            }
        }
        for e in config.adaptors.keys() {
            if !self.adaptor_knobs.iter().any(|a| &a.edge == e) {
                return Err(UnknownKnob(format!("rate:{e}")));
            }
        }
        Ok(())
    }

    /// Fits a config from another space onto this one: knobs it lacks take
    /// their default, knobs this space lacks are dropped, out-of-range
    /// values are clamped. Returns the names of defaulted and dropped knobs.
    pub fn reshape(&self, config: &Config) -> (Config, Vec<String>, Vec<String>) {
        let mut out = Config::empty(config.provenance);
        let mut defaulted = Vec::new();
        for q in &self.quota_knobs {
            let v = match config.quotas.get(&q.node) {
                Some(v) => v.clamp(q.min, q.max),
                None => {
                    defaulted.push(format!("quota:{}", q.node));
                    self.total_cpu_budget
                }
            };
            out.quotas.insert(q.node.clone(), v);
        }
        for a in &self.adaptor_knobs {
            let v = match config.adaptors.get(&a.edge) {
                Some(RateLimit::Hz(h)) => a.limit(h.clamp(a.min_hz, a.max_hz)),
                Some(RateLimit::Unlimited) => RateLimit::Unlimited,
                None => {
                    defaulted.push(format!("rate:{}", a.edge));
                    RateLimit::Unlimited
                }
            };
            out.adaptors.insert(a.edge.clone(), v);
        }
        let quota_nodes: BTreeSet<&String> = self.quota_knobs.iter().map(|q| &q.node).collect();
        let edges: BTreeSet<&EdgeId> = self.adaptor_knobs.iter().map(|a| &a.edge).collect();
        let dropped = config
            .quotas
            .keys()
            .filter(|n| !quota_nodes.contains(n))
            .map(|n| format!("quota:{n}"))
            .chain(
                config
                    .adaptors
                    .keys()
                    .filter(|e| !edges.contains(e))
                    .map(|e| format!("rate:{e}")),
            )
            .collect();
        (out, defaulted, dropped)
    }

    /// Replaces the level grid of the knob called `name`.
    pub fn set_range(
        &mut self,
        name: &str,
        min: f64,
        max: f64,
        step: f64,
    ) -> Result<(), UnknownKnob> {
        let i = (0..self.dims())
            .find(|&i| self.knob_name(i) == name)
            .ok_or_else(|| UnknownKnob(name.to_string()))?;
        let nq = self.quota_knobs.len();
        if i < nq {
            let k = &mut self.quota_knobs[i];
            (k.min, k.max, k.step) = (min, max, step);
        } else {
            let k = &mut self.adaptor_knobs[i - nq];
            (k.min_hz, k.max_hz, k.step) = (min, max, step);
        }
        Ok(())
    }

    /// Space without adaptor knobs: every edge stays unthrottled.
    pub fn cgroups_only(&self) -> ConfigSpace {
        ConfigSpace {
            quota_knobs: self.quota_knobs.clone(),
            adaptor_knobs: Vec::new(),
            total_cpu_budget: self.total_cpu_budget,
        }
    }

    /// Pins every knob not named in `free` to its value in `base`, leaving a
    /// lower-dimensional effective space. Pinned knobs keep a single level.
    pub fn pin_except(&self, free: &[&str], base: &Config) -> ConfigSpace {
        let mut out = self.clone();
        let base_u = self.unit_from_config(base);
        let fixed: BTreeMap<usize, f64> = (0..self.dims())
            .filter(|i| !free.contains(&self.knob_name(*i).as_str()))
            .map(|i| {
                let lv = self.knob_levels(i);
                let idx = (base_u[i] * (lv.len() - 1) as f64).round() as usize;
                (i, lv[idx.min(lv.len() - 1)])
            })
            .collect();
        let nq = self.quota_knobs.len();
        for (i, v) in fixed {
            if i < nq {
                out.quota_knobs[i].min = v;
                out.quota_knobs[i].max = v;
            } else {
                out.adaptor_knobs[i - nq].min_hz = v;
                out.adaptor_knobs[i - nq].max_hz = v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_range_regrids_one_knob() {
        let mut space = ConfigSpace {
            quota_knobs: vec![QuotaKnob {
                node: "a".into(),
                min: 0.05,
                max: 1.0,
                step: 0.05,
            }],
            adaptor_knobs: vec![],
            total_cpu_budget: 1.0,
        };
        space.set_range("quota:a", 0.2, 1.0, 0.4).unwrap();
        assert_eq!(space.knob_levels(0), vec![0.2, 0.6, 1.0]);
        assert!(space.set_range("quota:b", 0.1, 1.0, 0.1).is_err());
    }

    #[test]
    fn level_grid() {
        assert_eq!(levels(0.05, 0.2, 0.05), vec![0.05, 0.1, 0.15, 0.2]);
        assert_eq!(levels(0.5, 1.2, 0.5), vec![0.5, 1.0, 1.2]);
        assert_eq!(levels(3.0, 3.0, 0.5), vec![3.0]);
        assert_eq!(levels(0.05, 1.0, 0.05).len(), 20);
    }

    #[test]
    fn unit_round_trip_on_grid() {
        let space = ConfigSpace {
            quota_knobs: vec![QuotaKnob {
                node: "a".into(),
                min: 0.05,
                max: 1.0,
                step: 0.05,
            }],
            adaptor_knobs: vec![AdaptorKnob {
                edge: EdgeId::new("t", "a"),
                min_hz: 0.5,
                max_hz: 30.0,
                step: 0.5,
                nominal_hz: 30.0,
            }],
            total_cpu_budget: 1.0,
        };
        assert_eq!(space.size(), 20 * 60);
        for idx in [0u128, 7, 599, 1199] {
            let c = space.grid_point(idx, Provenance::Tuned);
            let back = space.config_from_unit(&space.unit_from_config(&c), Provenance::Tuned);
            assert_eq!(c, back);
        }
        let d = space.default_config();
        assert_eq!(d.quotas["a"], 1.0);
        assert_eq!(d.adaptors[&EdgeId::new("t", "a")], RateLimit::Unlimited);
        let top = space.grid_point(1199, Provenance::Tuned);
        assert_eq!(top.adaptors[&EdgeId::new("t", "a")], RateLimit::Unlimited);
    }
}
