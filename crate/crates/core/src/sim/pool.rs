//! Worker pool of one node: at most `capacity` callbacks in flight, the
//! rest wait in FIFO order.

use std::collections::VecDeque;
use std::sync::Arc;

use super::settings::Micros;

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobSource {
    /// Periodic publication `index` of the node.
    Timer { index: usize },
    /// Callback of subscription `index` for a message published at
    /// `published_at`.
    Callback { index: usize, published_at: Micros },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub source: JobSource,
    /// Topic consumed (callbacks) or produced (timers).
    pub topic: Arc<str>,
    /// CPU-seconds still to run.
    pub remaining: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dispatch {
    Started,
    Queued,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerPoolState {
    pub capacity: usize,
    pub active: Vec<Job>,
    pub pending: VecDeque<Job>,
}

impl WorkerPoolState {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            active: Vec::with_capacity(capacity),
            pending: VecDeque::new(),
        }
    }

    pub fn dispatch_callback(&mut self, job: Job) -> Dispatch {
        if self.active.len() < self.capacity {
            self.active.push(job);
            Dispatch::Started
        } else {
            self.pending.push_back(job);
            Dispatch::Queued
        }
    }

    /// CPU-seconds the active callbacks can absorb in one quantum; each
    /// thread runs at most one quantum.
    pub fn demand(&self, quantum: f64) -> f64 {
        self.active.iter().map(|j| j.remaining.min(quantum)).sum()
    }

    /// Share of a grant of `cores` that does useful work when `threads`
    /// callbacks are runnable: `1 / (1 + overhead * excess)`, where excess
    /// counts threads beyond `max(cores, 1)`.
    pub fn efficiency(&self, cores: f64, overhead: f64) -> f64 {
        let excess = self.active.len() as f64 - cores.max(1.0);
        if overhead <= 0.0 || excess <= 0.0 {
            1.0
        } else {
            1.0 / (1.0 + overhead * excess)
        }
    }

    /// Spreads `grant` evenly over the active callbacks and returns those
    /// that finished, in admission order.
    pub fn run(&mut self, grant: f64, quantum: f64) -> Vec<Job> {
        if self.active.is_empty() {
            return Vec::new();
        }
        let caps: Vec<f64> = self
            .active
            .iter()
            .map(|j| j.remaining.min(quantum))
            .collect();
        let mut shares = vec![0.0; caps.len()];
        let mut left = grant;
        let mut open: Vec<usize> = (0..caps.len()).collect();
        while !open.is_empty() && left > EPS {
            let per = left / open.len() as f64;
            let (capped, rest): (Vec<usize>, Vec<usize>) =
                open.iter().partition(|&&i| caps[i] <= per);
            if capped.is_empty() {
                for &i in &rest {
                    shares[i] = per;
                }
                break;
            }
            for &i in &capped {
                shares[i] = caps[i];
                left -= caps[i];
            }
            open = rest;
        }
        let mut finished = Vec::new();
        let mut kept = Vec::with_capacity(self.active.len());
        for (mut job, share) in self.active.drain(..).zip(shares) {
            job.remaining -= share;
            if job.remaining <= EPS {
                finished.push(job);
            } else {
                kept.push(job);
            }
        }
        self.active = kept;
        finished
    }

    /// Moves waiting callbacks into free workers; returns the started jobs.
    pub fn admit(&mut self) -> Vec<Job> {
        let mut started = Vec::new();
        while self.active.len() < self.capacity {
            match self.pending.pop_front() {
                Some(j) => {
                    started.push(j.clone());
                    self.active.push(j);
                }
                None => break,
            }
        }
        started
    }

    /// Empties the pool; returns the callbacks that were running.
    pub fn clear(&mut self) -> Vec<Job> {
        self.pending.clear();
        std::mem::take(&mut self.active)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn job(cost: f64) -> Job {
        Job {
            source: JobSource::Callback {
                index: 0,
                published_at: 0,
            },
            topic: Arc::from("image"),
            remaining: cost,
        }
    }

    #[test]
    fn cap_of_ten() {
        let mut pool = WorkerPoolState::new(10);
        let results: Vec<_> = (0..11).map(|_| pool.dispatch_callback(job(0.3))).collect();
        assert_eq!(
            results.iter().filter(|d| **d == Dispatch::Started).count(),
            10
        );
        assert_eq!(results[10], Dispatch::Queued);
        assert_eq!((pool.active.len(), pool.pending.len()), (10, 1));
        assert_eq!(pool.efficiency(1.0, 0.0), 1.0);
        assert!((pool.efficiency(1.0, 0.05) - 1.0 / 1.45).abs() < 1e-12);
        assert!((pool.efficiency(4.0, 0.05) - 1.0 / 1.3).abs() < 1e-12);
    }

    #[test]
    fn single_message_starts() {
        let mut pool = WorkerPoolState::new(4);
        assert_eq!(pool.dispatch_callback(job(0.1)), Dispatch::Started);
        assert_eq!((pool.active.len(), pool.pending.len()), (1, 0));
    }

    #[test]
    fn finishing_admits_pending_head() {
        let mut pool = WorkerPoolState::new(1);
        pool.dispatch_callback(job(0.001));
        pool.dispatch_callback(job(0.002));
        let done = pool.run(0.001, 0.001);
        assert_eq!(done.len(), 1);
        let started = pool.admit();
        assert_eq!(started.len(), 1);
        assert!((pool.active[0].remaining - 0.002).abs() < 1e-15);
        assert!(pool.pending.is_empty());
    }

    #[test]
    fn grant_spread_evenly_with_thread_cap() {
        let mut pool = WorkerPoolState::new(3);
        pool.dispatch_callback(job(0.0002));
        pool.dispatch_callback(job(1.0));
        pool.dispatch_callback(job(1.0));
        assert!((pool.demand(0.001) - 0.0022).abs() < 1e-15);
        let done = pool.run(0.0012, 0.001);
        assert_eq!(done.len(), 1);
        assert!((pool.active[0].remaining - 0.9995).abs() < 1e-12);
    }
}
