//! cpu.max style quota accounting for one node.

use super::settings::{micros_to_secs, Micros};

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CgroupState {
    /// Cores; `None` means no limit.
    pub quota: Option<f64>,
    pub period: Micros,
    /// CPU-seconds consumed in the current period.
    pub consumed: f64,
    pub throttled_until: Option<Micros>,
}

impl CgroupState {
    pub fn new(quota: Option<f64>, period: Micros) -> Self {
        Self {
            quota,
            period,
            consumed: 0.0,
            throttled_until: None,
        }
    }

    /// CPU-seconds allowed per period.
    pub fn limit(&self) -> Option<f64> {
        self.quota.map(|q| q * micros_to_secs(self.period))
    }

    pub fn remaining(&self) -> f64 {
        match self.limit() {
            Some(l) => (l - self.consumed).max(0.0),
            None => f64::INFINITY,
        }
    }

    pub fn is_throttled(&self) -> bool {
        self.throttled_until.is_some()
    }

    /// Starts a new period at `now`. Returns true if a throttle was lifted.
    pub fn rollover(&mut self) -> bool {
        self.consumed = 0.0;
        self.throttled_until.take().is_some()
    }
}

/// Charges `grant` CPU-seconds at time `now`. Returns true when the charge
/// exhausts the quota and the node becomes throttled until the next period
/// boundary.
pub fn enforce_quota(state: &mut CgroupState, grant: f64, now: Micros) -> bool {
    debug_assert!(grant >= 0.0);
    state.consumed += grant;
    match state.limit() {
        Some(limit) if !state.is_throttled() && state.consumed >= limit - EPS => {
            state.consumed = state.consumed.min(limit);
            let boundary = now.div_ceil(state.period) * state.period;
            state.throttled_until = Some(boundary);
            true
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_core_throttles_after_fifty_ms() {
        let mut cg = CgroupState::new(Some(0.5), 100_000);
        let mut fired_at = None;
        for k in 1..=100u64 {
            if enforce_quota(&mut cg, 0.001, k * 1000) {
                fired_at = Some(k);
                break;
            }
        }
        assert_eq!(fired_at, Some(50));
        assert!((cg.consumed - 0.05).abs() < 1e-12);
        assert_eq!(cg.throttled_until, Some(100_000));
        assert_eq!(cg.remaining(), 0.0);
    }

    #[test]
    fn rollover_resets() {
        let mut cg = CgroupState::new(Some(0.5), 100_000);
        assert!(enforce_quota(&mut cg, 0.05, 60_000));
        assert!(cg.rollover());
        assert_eq!(cg.consumed, 0.0);
        assert!(!cg.is_throttled());
        assert!(!cg.rollover());
    }

    #[test]
    fn generous_quota_never_throttles() {
        let mut cg = CgroupState::new(Some(1.0), 100_000);
        for k in 0..10_000u64 {
            if k % 100 == 0 {
                cg.rollover();
            }
            assert!(!enforce_quota(&mut cg, 0.0001, k * 1000));
        }
        let mut unlimited = CgroupState::new(None, 100_000);
        assert!(!enforce_quota(&mut unlimited, 1e6, 0));
    }
}
