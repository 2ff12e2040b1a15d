//! Per-subscription-edge message filters.
//!
//! An adaptor gates delivery on one edge with a minimum inter-arrival
//! interval: a message passes iff at least `1 / rate` seconds have elapsed
//! since the last message it let through. Dropped messages are gone.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::config::{Config, RateLimit};
use crate::sim::{Micros, MICROS_PER_SEC};
use crate::stack::{ConfigSpace, EdgeId, StackModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Drop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptorState {
    pub edge: EdgeId,
    pub rate: RateLimit,
    pub last_passed: Option<Micros>,
    pub passed: u64,
    pub dropped: u64,
}

impl AdaptorState {
    pub fn new(edge: EdgeId, rate: RateLimit) -> Self {
        Self {
            edge,
            rate,
            last_passed: None,
            passed: 0,
            dropped: 0,
        }
    }

    /// Decides the fate of a message arriving at `arrival`.
    pub fn filter_message(&mut self, arrival: Micros) -> Verdict {
        debug_assert!(self.last_passed.is_none_or(|l| arrival >= l));
        let pass = match self.rate {
            RateLimit::Unlimited => true,
            RateLimit::Hz(h) if h <= 0.0 => false,
            RateLimit::Hz(h) => match self.last_passed {
                None => true,
                Some(last) => {
                    let interval = MICROS_PER_SEC / h;
                    (arrival - last) as f64 >= interval - 1e-9
                }
            },
        };
        if pass {
            self.last_passed = Some(arrival);
            self.passed += 1;
            Verdict::Pass
        } else {
            self.dropped += 1;
            Verdict::Drop
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no adaptor on edge {0}")]
pub struct UnknownEdge(pub EdgeId);

/// Adaptors keyed by edge. Edges without an entry pass everything.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdaptorSet {
    adaptors: BTreeMap<EdgeId, AdaptorState>,
}

impl AdaptorSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, edge: EdgeId, rate: RateLimit) {
        self.adaptors
            .insert(edge.clone(), AdaptorState::new(edge, rate));
    }

    /// One adaptor per edge named in the config.
    pub fn from_config(config: &Config) -> Self {
        let mut set = Self::new();
        for (e, r) in &config.adaptors {
            set.insert(e.clone(), *r);
        }
        set
    }

    /// Unlimited adaptor on every subscription edge of the stack.
    pub fn transparent(stack: &StackModel) -> Self {
        let mut set = Self::new();
        for e in stack.edges() {
            set.insert(e, RateLimit::Unlimited);
        }
        set
    }

    pub fn len(&self) -> usize {
        self.adaptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adaptors.is_empty()
    }

    pub fn get(&self, edge: &EdgeId) -> Option<&AdaptorState> {
        self.adaptors.get(edge)
    }

    pub fn iter(&self) -> impl Iterator<Item = &AdaptorState> {
        self.adaptors.values()
    }

    pub fn filter(&mut self, edge: &EdgeId, arrival: Micros) -> Verdict {
        match self.adaptors.get_mut(edge) {
            Some(a) => a.filter_message(arrival),
            None => Verdict::Pass,
        }
    }

    /// Changes the limit of an existing adaptor. `last_passed` is kept so a
    /// reconfiguration never releases a burst.
    pub fn set_rate(&mut self, edge: &EdgeId, rate: RateLimit) -> Result<(), UnknownEdge> {
        match self.adaptors.get_mut(edge) {
            Some(a) => {
                a.rate = rate;
                Ok(())
            }
            None => Err(UnknownEdge(edge.clone())),
        }
    }
}

/// One unlimited adaptor per adaptor knob of the space.
pub fn attach_adaptors(space: &ConfigSpace) -> AdaptorSet {
    let mut set = AdaptorSet::new();
    for k in &space.adaptor_knobs {
        set.insert(k.edge.clone(), RateLimit::Unlimited);
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::secs_to_micros;

    fn edge() -> EdgeId {
        EdgeId::new("image", "web")
    }

    #[test]
    fn two_hz_decimation() {
        let mut a = AdaptorState::new(edge(), RateLimit::Hz(2.0));
        let verdicts: Vec<_> = [0.0, 0.1, 0.4, 0.5, 0.9, 1.0]
            .iter()
            .map(|&t| a.filter_message(secs_to_micros(t)))
            .collect();
        use Verdict::*;
        assert_eq!(verdicts, vec![Pass, Drop, Drop, Pass, Drop, Pass]);
        assert_eq!((a.passed, a.dropped), (3, 3));
    }

    #[test]
    fn unlimited_passes_everything() {
        let mut a = AdaptorState::new(edge(), RateLimit::Unlimited);
        for t in 0..100 {
            assert_eq!(a.filter_message(t), Verdict::Pass);
        }
    }

    #[test]
    fn zero_rate_blocks() {
        let mut a = AdaptorState::new(edge(), RateLimit::Hz(0.0));
        assert_eq!(a.filter_message(0), Verdict::Drop);
        assert_eq!(a.filter_message(10_000_000), Verdict::Drop);
    }

    #[test]
    fn thirty_into_ten_hz() {
        // 30 Hz arrivals on the microsecond grid for 10 s.
        let mut a = AdaptorState::new(edge(), RateLimit::Hz(10.0));
        for k in 0..300u64 {
            a.filter_message(((k as f64) * MICROS_PER_SEC / 30.0).round() as u64);
        }
        assert!((99..=101).contains(&a.passed), "passed {}", a.passed);
        assert_eq!(a.passed + a.dropped, 300);
    }

    #[test]
    fn set_rate_keeps_last_passed() {
        let mut set = AdaptorSet::new();
        set.insert(edge(), RateLimit::Hz(10.0));
        assert_eq!(set.filter(&edge(), 0), Verdict::Pass);
        set.set_rate(&edge(), RateLimit::Hz(2.0)).unwrap();
        assert_eq!(set.get(&edge()).unwrap().last_passed, Some(0));
        assert_eq!(set.filter(&edge(), 100_000), Verdict::Drop);
        assert_eq!(set.filter(&edge(), 500_000), Verdict::Pass);
        set.set_rate(&edge(), RateLimit::Unlimited).unwrap();
        assert_eq!(set.filter(&edge(), 500_001), Verdict::Pass);
        let missing = EdgeId::new("scan", "nav");
        assert_eq!(
            set.set_rate(&missing, RateLimit::Hz(1.0)),
            Err(UnknownEdge(missing.clone()))
        );
        // Unfiltered edges pass.
        assert_eq!(set.filter(&missing, 0), Verdict::Pass);
    }
}
