//! One assignable point of the configuration space: a CPU quota per node
//! and a rate limit per adaptor edge.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::stack::EdgeId;

/// Rate limit of one adaptor. `Hz(0.0)` drops every message.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateLimit {
    Unlimited,
    Hz(f64),
}

impl RateLimit {
    pub fn hz(&self) -> Option<f64> {
        match self {
            RateLimit::Unlimited => None,
            RateLimit::Hz(h) => Some(*h),
        }
    }
}

impl fmt::Display for RateLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateLimit::Unlimited => f.write_str("unlimited"),
            RateLimit::Hz(h) => write!(f, "{h}"),
        }
    }
}

impl Serialize for RateLimit {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            RateLimit::Unlimited => s.serialize_str("unlimited"),
            RateLimit::Hz(h) => s.serialize_f64(*h),
        }
    }
}

impl<'de> Deserialize<'de> for RateLimit {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(h) if h >= 0.0 && h.is_finite() => Ok(RateLimit::Hz(h)),
            Repr::Num(h) => Err(serde::de::Error::custom(format!("invalid rate limit {h}"))),
            Repr::Str(s) if s == "unlimited" => Ok(RateLimit::Unlimited),
            Repr::Str(s) => Err(serde::de::Error::custom(format!(
                "invalid rate limit {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Default,
    Tuned,
    Random,
    Library,
    Remediation,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::Default => "default",
            Provenance::Tuned => "tuned",
            Provenance::Random => "random",
            Provenance::Library => "library",
            Provenance::Remediation => "remediation",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    /// Node id to CPU quota in cores. Missing nodes run without a quota;
    /// a quota of zero suspends the node.
    pub quotas: BTreeMap<String, f64>,
    /// Edges without an entry carry no adaptor.
    pub adaptors: BTreeMap<EdgeId, RateLimit>,
    pub provenance: Provenance,
}

impl Config {
    pub fn empty(provenance: Provenance) -> Self {
        Self {
            quotas: BTreeMap::new(),
            adaptors: BTreeMap::new(),
            provenance,
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// Stable textual key ignoring provenance, used to detect repeats.
    pub fn key(&self) -> String {
        let mut s = String::new();
        for (n, q) in &self.quotas {
            s.push_str(&format!("{n}={q:.6};"));
        }
        for (e, r) in &self.adaptors {
            s.push_str(&format!("{e}={r};"));
        }
        s
    }
}
